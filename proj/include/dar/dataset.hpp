#pragma once

// Training data: a procedural shapes dataset (pure function of seed and
// index) and a class-per-subfolder PPM ingestion path.

#include <string>
#include <vector>

#include "dar/tensor.hpp"

namespace dar {

struct LabeledImage {
    Tensor<float> image;  // [3, S, S] in [-1, 1]
    int64_t label = 0;
};

// Deterministic procedural 32x32-style RGB shapes: per class a distinct
// shape kind and base color, with randomized position, scale and color
// jitter. Same (seed, index) always yields the same sample.
class ShapesDataset {
public:
    ShapesDataset(uint64_t seed, int64_t count, int64_t num_classes, int64_t image_size = 32);

    LabeledImage at(int64_t index) const;

    int64_t size() const { return count_; }
    int64_t num_classes() const { return num_classes_; }
    int64_t image_size() const { return image_size_; }

private:
    uint64_t seed_;
    int64_t count_;
    int64_t num_classes_;
    int64_t image_size_;
};

// Loads <path>/<class_name>/*.ppm; labels assigned by sorted folder name.
// Unreadable files are skipped with a warning; an empty result is fatal.
class FolderDataset {
public:
    FolderDataset(const std::string& path, int64_t image_size);

    LabeledImage at(int64_t index) const;

    int64_t size() const { return static_cast<int64_t>(files_.size()); }
    int64_t num_classes() const { return num_classes_; }
    int64_t image_size() const { return image_size_; }

private:
    std::vector<std::pair<std::string, int64_t>> files_;
    int64_t num_classes_ = 0;
    int64_t image_size_;
};

}  // namespace dar
