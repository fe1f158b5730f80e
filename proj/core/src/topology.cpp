#include "qforest/topology.hpp"

#include "qforest/error.hpp"

namespace qforest {

namespace {

bool is_power_of_two(std::size_t x) { return x != 0 && (x & (x - 1)) == 0; }

}  // namespace

std::size_t TreeTopology::depth() const {
    std::size_t d = 0;
    for (std::size_t n = num_leaves; n > 1; n >>= 1) ++d;
    return d;
}

TreeTopology build_topology(std::size_t side) {
    if (!is_power_of_two(side)) {
        throw ArgumentError("image side must be a power of two, got " + std::to_string(side));
    }
    TreeTopology topo;
    topo.side = side;
    topo.num_leaves = side * side;
    topo.leaf_to_pixel.resize(topo.num_leaves);
    // Interleave the bits of (r, c) with r occupying the even (less significant)
    // positions: slot bit 0 toggles r's LSB, so bottom-level siblings are vertically
    // adjacent, and each further level alternates the axis being merged.
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            std::size_t slot = 0;
            for (std::size_t bit = 0; (side >> (bit + 1)) != 0; ++bit) {
                slot |= ((r >> bit) & 1u) << (2 * bit);
                slot |= ((c >> bit) & 1u) << (2 * bit + 1);
            }
            topo.leaf_to_pixel[slot] = r * side + c;
        }
    }
    return topo;
}

TreeTopology balanced_topology(std::size_t num_leaves) {
    if (!is_power_of_two(num_leaves) || num_leaves < 2) {
        throw ArgumentError("leaf count must be a power of two >= 2, got " +
                            std::to_string(num_leaves));
    }
    TreeTopology topo;
    topo.num_leaves = num_leaves;
    return topo;
}

}  // namespace qforest
