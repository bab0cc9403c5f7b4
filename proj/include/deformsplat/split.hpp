#pragma once

#include <cstddef>
#include <vector>

namespace deformsplat {

/// Interleaved 7:1 split: frames with index % 8 == 1 are held out, so the first
/// frame (used to seed the canonical cloud) always belongs to the training set.
struct FrameSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

inline bool is_test_frame(std::size_t index) { return index % 8 == 1; }

inline FrameSplit split_frames(std::size_t frame_count) {
    FrameSplit s;
    for (std::size_t i = 0; i < frame_count; ++i) {
        (is_test_frame(i) ? s.test : s.train).push_back(i);
    }
    return s;
}

} // namespace deformsplat
