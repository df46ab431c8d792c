#pragma once

#include <cmath>

#include "byzfed/rng.hpp"
#include "byzfed/types.hpp"

namespace byzfed {

// Intermittent model poisoning: a Byzantine client perturbs its upload with
// probability attack_prob by adding zero-mean Gaussian noise of variance
// attack_var per coordinate. Honest clients, zero-probability and
// zero-strength attacks return the input unchanged (bit for bit).
inline Vector corrupt_model(const Vector& local_model, int client_id,
                            const AttackSpec& spec, RngStream& rng) {
    if (spec.attack_var < 0.0)
        throw ConfigError("corrupt_model: attack_variance must be >= 0");
    if (client_id < 0 || client_id >= static_cast<int>(spec.byzantine.size()))
        throw ArgumentError("corrupt_model: client id out of range");
    if (!spec.byzantine[client_id] || spec.attack_prob <= 0.0 || spec.attack_var == 0.0)
        return local_model;
    const bool attacks = rng.uniform01() < spec.attack_prob;
    if (!attacks) return local_model;
    Vector out = local_model;
    const double sd = std::sqrt(spec.attack_var);
    for (long d = 0; d < out.size(); ++d) out[d] += sd * rng.normal();
    return out;
}

}  // namespace byzfed
