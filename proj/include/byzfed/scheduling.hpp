#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "byzfed/rng.hpp"
#include "byzfed/types.hpp"

namespace byzfed {

// The coordinates one client exchanges with the server in one round.
// Always exactly M distinct indices in [0, D), kept sorted.
struct SelectionMask {
    std::vector<int> indices;

    int size() const { return static_cast<int>(indices.size()); }
    bool contains(int coord) const {
        return std::binary_search(indices.begin(), indices.end(), coord);
    }

    static SelectionMask full(int dim) {
        SelectionMask m;
        m.indices.resize(dim);
        std::iota(m.indices.begin(), m.indices.end(), 0);
        return m;
    }
};

namespace detail {

// First `take` entries of a uniform random permutation of [0, n), sorted.
inline std::vector<int> sample_without_replacement(int n, int take, RngStream& rng) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < take; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace detail

// Draws one client's coordinate mask. In uniform mode the M coordinates are
// uniform without replacement, independent across clients and rounds. In
// round-robin mode the mask is the cyclic window starting at *rr_offset,
// which then advances by M.
inline SelectionMask draw_selection_mask(int dim, int shared, MaskMode mode,
                                         int* rr_offset, RngStream& rng) {
    if (shared < 1 || shared > dim)
        throw ArgumentError("draw_selection_mask: 1 <= M <= D violated (M=" +
                            std::to_string(shared) + ", D=" + std::to_string(dim) + ")");
    if (shared == dim) return SelectionMask::full(dim);
    SelectionMask m;
    if (mode == MaskMode::kUniformRandom) {
        m.indices = detail::sample_without_replacement(dim, shared, rng);
    } else {
        const int off = rr_offset ? *rr_offset : 0;
        m.indices.reserve(shared);
        for (int i = 0; i < shared; ++i) m.indices.push_back((off + i) % dim);
        std::sort(m.indices.begin(), m.indices.end());
        if (rr_offset) *rr_offset = (off + shared) % dim;
    }
    return m;
}

// Uniform sample of round_size distinct client ids.
inline std::vector<int> draw_client_set(int clients, int round_size, RngStream& rng) {
    if (round_size < 1 || round_size > clients)
        throw ArgumentError("draw_client_set: 1 <= round_size <= K violated (round_size=" +
                            std::to_string(round_size) + ", K=" + std::to_string(clients) + ")");
    if (round_size == clients) {
        std::vector<int> all(clients);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    return detail::sample_without_replacement(clients, round_size, rng);
}

// One round's scheduling draw: the selected clients, the masks in force this
// round and the masks for the next round (used by the aggregation step).
struct RoundSchedule {
    std::vector<int> selected;
    std::vector<SelectionMask> masks_now;
    std::vector<SelectionMask> masks_next;
};

// Owns the per-client round-robin offsets of one simulation replica.
class MaskScheduler {
public:
    MaskScheduler(int clients, int dim, int shared, MaskMode mode)
        : clients_(clients), dim_(dim), shared_(shared), mode_(mode),
          offsets_(clients, 0) {}

    SelectionMask draw(int client, RngStream& rng) {
        return draw_selection_mask(dim_, shared_, mode_, &offsets_[client], rng);
    }

    std::vector<SelectionMask> draw_all(std::vector<RngStream>& per_client) {
        std::vector<SelectionMask> out;
        out.reserve(clients_);
        for (int k = 0; k < clients_; ++k) out.push_back(draw(k, per_client[k]));
        return out;
    }

private:
    int clients_, dim_, shared_;
    MaskMode mode_;
    std::vector<int> offsets_;
};

}  // namespace byzfed
