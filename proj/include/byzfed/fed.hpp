#pragma once

#include <cmath>
#include <vector>

#include "byzfed/adversary.hpp"
#include "byzfed/data.hpp"
#include "byzfed/scheduling.hpp"
#include "byzfed/types.hpp"

namespace byzfed {

// Uplink message: the masked entries of one client's (possibly corrupted)
// local model, keyed by the mask that selected them.
struct ClientUpdate {
    int client_id = -1;
    SelectionMask mask;
    Vector payload;  // size mask.size(), values at mask.indices
};

inline ClientUpdate extract_update(int client_id, const Vector& model,
                                   const SelectionMask& mask) {
    ClientUpdate u;
    u.client_id = client_id;
    u.mask = mask;
    u.payload.resize(mask.size());
    for (int i = 0; i < mask.size(); ++i) u.payload[i] = model[mask.indices[i]];
    return u;
}

struct ClientStepResult {
    Vector next_local;
    double error = 0.0;  // response minus blended-model prediction
};

// One local update. When `mask` is non-null the client first blends the
// masked global coordinates into its local model (coordinate selection, no
// arithmetic), then takes an LMS step on the fresh sample. Clients outside
// the round pass mask == nullptr and step on their retained model; the
// global recursion the analysis works with has every client stepping each
// round, with the blend gated by participation.
inline ClientStepResult client_step(const Vector& local, const Vector* global,
                                    const SelectionMask* mask, const DataSample& sample,
                                    double stepsize) {
    if (stepsize < 0.0) throw ArgumentError("client_step: stepsize must be >= 0");
    if (sample.input.size() != local.size())
        throw ArgumentError("client_step: dimension mismatch");
    if (!sample.input.allFinite() || !std::isfinite(sample.response))
        throw NumericError("client_step: non-finite sample");
    ClientStepResult r;
    r.next_local = local;
    if (mask != nullptr) {
        if (global == nullptr) throw ArgumentError("client_step: mask without global slice");
        for (int idx : mask->indices) r.next_local[idx] = (*global)[idx];
    }
    r.error = sample.response - r.next_local.dot(sample.input);
    r.next_local += stepsize * r.error * sample.input;
    return r;
}

// Server aggregation: each update contributes its payload on its mask
// coordinates and the old global entries elsewhere; contributions are
// averaged over the round.
inline Vector server_aggregate(const Vector& old_global,
                               const std::vector<ClientUpdate>& updates,
                               int round_size) {
    if (static_cast<int>(updates.size()) != round_size)
        throw ProtocolError("server_aggregate: expected " + std::to_string(round_size) +
                            " updates, got " + std::to_string(updates.size()));
    Vector acc = Vector::Zero(old_global.size());
    for (const auto& u : updates) {
        Vector contrib = old_global;
        if (u.payload.size() != u.mask.size())
            throw ProtocolError("server_aggregate: payload/mask size mismatch");
        for (int i = 0; i < u.mask.size(); ++i) contrib[u.mask.indices[i]] = u.payload[i];
        acc += contrib;
    }
    return acc / static_cast<double>(round_size);
}

// One full round of the partial-sharing algorithm. Every client draws one
// sample and takes a local step (selected clients blend the masked global
// entries first); selected clients upload their next-mask entries, Byzantine
// ones possibly perturbed; the server averages. Returns the per-client
// blended-prediction errors of this round.
//
// Stream discipline: samples[k] must already be drawn by the caller;
// attack_rngs are only touched for Byzantine selected clients.
inline std::vector<double> psofed_round(FedState& state, const NetworkSpec& net,
                                        const RoundSchedule& sched,
                                        const std::vector<DataSample>& samples,
                                        const AttackSpec& attack,
                                        std::vector<RngStream>& attack_rngs) {
    const int K = net.clients;
    std::vector<double> errors(K, 0.0);
    std::vector<bool> in_round(K, false);
    for (int k : sched.selected) in_round[k] = true;

    for (int k = 0; k < K; ++k) {
        const SelectionMask* mask = in_round[k] ? &sched.masks_now[k] : nullptr;
        ClientStepResult r = client_step(state.local[k], &state.global, mask,
                                         samples[k], net.stepsize);
        state.local[k] = std::move(r.next_local);
        errors[k] = r.error;
    }

    std::vector<ClientUpdate> updates;
    updates.reserve(sched.selected.size());
    for (int k : sched.selected) {
        Vector upload = corrupt_model(state.local[k], k, attack, attack_rngs[k]);
        updates.push_back(extract_update(k, upload, sched.masks_next[k]));
    }
    state.global = server_aggregate(state.global, updates, net.round_size);
    state.iteration += 1;
    return errors;
}

// Majority-vote sign compression baseline: the round's scheduled clients
// send the coordinate-wise sign of their local gradient -x*eps evaluated at
// the (possibly poisoned) global model copy; the server moves against the
// sign of the summed votes. sign(0) = 0 throughout.
inline std::vector<double> signsgd_round(FedState& state, const NetworkSpec& net,
                                         const std::vector<int>& selected,
                                         const std::vector<DataSample>& samples,
                                         const AttackSpec& attack,
                                         std::vector<RngStream>& attack_rngs) {
    const int K = net.clients;
    std::vector<double> errors(K, 0.0);
    for (int k = 0; k < K; ++k)
        errors[k] = samples[k].response - state.global.dot(samples[k].input);

    Vector votes = Vector::Zero(net.dim);
    for (int k : selected) {
        Vector model = corrupt_model(state.global, k, attack, attack_rngs[k]);
        const double eps = samples[k].response - model.dot(samples[k].input);
        const Vector grad = -eps * samples[k].input;
        for (int d = 0; d < net.dim; ++d)
            votes[d] += grad[d] > 0.0 ? 1.0 : (grad[d] < 0.0 ? -1.0 : 0.0);
    }
    for (int d = 0; d < net.dim; ++d) {
        const double s = votes[d] > 0.0 ? 1.0 : (votes[d] < 0.0 ? -1.0 : 0.0);
        state.global[d] -= net.stepsize * s;
    }
    state.iteration += 1;
    return errors;
}

}  // namespace byzfed
