#pragma once

#include <cstddef>
#include <vector>

namespace qforest {

/// Height-balanced full binary tree over num_leaves inputs. Internal nodes are stored
/// in heap order: node 0 is the top, children of node i are nodes 2i+1 and 2i+2 while
/// those are internal, bottom-layer nodes own two adjacent leaf slots.
struct TreeTopology {
    std::size_t num_leaves = 0;  // power of two
    std::size_t side = 0;        // L when image-mapped, 0 for abstract trees
    /// leaf slot -> pixel index r*side + c; empty for abstract trees (slot == leaf).
    std::vector<std::size_t> leaf_to_pixel;

    std::size_t num_nodes() const { return num_leaves - 1; }
    std::size_t depth() const;

    /// First heap index of the bottom layer (nodes whose children are leaves).
    std::size_t bottom_begin() const { return num_leaves / 2 - 1; }
    bool is_bottom(std::size_t node) const { return node >= bottom_begin(); }
    std::size_t left_child(std::size_t node) const { return 2 * node + 1; }
    std::size_t right_child(std::size_t node) const { return 2 * node + 2; }
    std::size_t left_leaf(std::size_t node) const { return 2 * node + 2 - num_leaves; }
    std::size_t right_leaf(std::size_t node) const { return 2 * node + 3 - num_leaves; }
    std::size_t parent(std::size_t node) const { return (node - 1) / 2; }

    std::size_t pixel_of_leaf(std::size_t slot) const {
        return leaf_to_pixel.empty() ? slot : leaf_to_pixel[slot];
    }
};

/// Tree over the N = side^2 pixels of a square image. Sibling pairs alternate axes per
/// level: the bottom level joins vertically adjacent pixels (r,c),(r+1,c), the next
/// level joins the resulting 2x1 blocks horizontally, and so on, so every subtree
/// covers a contiguous square or 2:1 rectangle.
TreeTopology build_topology(std::size_t side);

/// Abstract balanced tree with identity leaf order (used by tests and oracles).
TreeTopology balanced_topology(std::size_t num_leaves);

}  // namespace qforest
