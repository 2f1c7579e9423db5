#include "dar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "dar/ppm.hpp"

namespace dar {

ShapesDataset::ShapesDataset(uint64_t seed, int64_t count, int64_t num_classes, int64_t image_size)
    : seed_(seed), count_(count), num_classes_(num_classes), image_size_(image_size) {
    check_arg(count > 0, "ShapesDataset: count must be positive");
    check_arg(num_classes >= 1 && num_classes <= 16, "ShapesDataset: supports 1..16 classes");
}

namespace {

struct Shape {
    int kind;  // 0 circle, 1 square, 2 triangle, 3 ring, 4 diamond, 5 cross
    double cx, cy, r;
};

bool inside(const Shape& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    switch (s.kind % 6) {
        case 0: return dx * dx + dy * dy <= s.r * s.r;
        case 1: return std::abs(dx) <= s.r && std::abs(dy) <= s.r;
        case 2: return dy >= -s.r && std::abs(dx) <= (s.r - dy) * 0.5 + 1e-9 && dy <= s.r;
        case 3: {
            const double d2 = dx * dx + dy * dy;
            return d2 <= s.r * s.r && d2 >= 0.25 * s.r * s.r;
        }
        case 4: return std::abs(dx) + std::abs(dy) <= s.r;
        default: return std::abs(dx) <= s.r * 0.33 || std::abs(dy) <= s.r * 0.33
                     ? (std::abs(dx) <= s.r && std::abs(dy) <= s.r)
                     : false;
    }
}

// one saturated base color per class
void class_color(int64_t label, double& r, double& g, double& b) {
    static const double palette[16][3] = {
        {0.9, 0.2, 0.2},  {0.2, 0.9, 0.2},  {0.25, 0.35, 0.95}, {0.9, 0.85, 0.2},
        {0.85, 0.3, 0.9}, {0.2, 0.85, 0.9}, {0.95, 0.55, 0.15}, {0.6, 0.9, 0.4},
        {0.5, 0.3, 0.9},  {0.9, 0.4, 0.6},  {0.3, 0.6, 0.5},    {0.7, 0.7, 0.9},
        {0.8, 0.6, 0.3},  {0.4, 0.8, 0.7},  {0.9, 0.7, 0.8},    {0.55, 0.55, 0.2},
    };
    r = palette[label][0];
    g = palette[label][1];
    b = palette[label][2];
}

}  // namespace

LabeledImage ShapesDataset::at(int64_t index) const {
    check_range(index >= 0 && index < count_, "ShapesDataset: index out of range");
    Rng rng(seed_stream(seed_, static_cast<uint64_t>(index), 0xDA7A));
    LabeledImage out;
    out.label = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(num_classes_)));

    const int64_t S = image_size_;
    Shape shape;
    shape.kind = static_cast<int>(out.label % 6);
    shape.cx = rng.uniform(0.3, 0.7) * static_cast<double>(S);
    shape.cy = rng.uniform(0.3, 0.7) * static_cast<double>(S);
    shape.r = rng.uniform(0.15, 0.32) * static_cast<double>(S);

    double cr, cg, cb;
    class_color(out.label, cr, cg, cb);
    const double jitter = rng.uniform(-0.15, 0.15);
    cr = std::clamp(cr + jitter, 0.0, 1.0);
    cg = std::clamp(cg + jitter, 0.0, 1.0);
    cb = std::clamp(cb + jitter, 0.0, 1.0);
    const double bg = rng.uniform(-0.95, -0.75);  // dark background in [-1,1]

    out.image = Tensor<float>::zeros({3, S, S});
    for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) {
            const bool in = inside(shape, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
            const double rgb[3] = {in ? cr * 2.0 - 1.0 : bg, in ? cg * 2.0 - 1.0 : bg, in ? cb * 2.0 - 1.0 : bg};
            for (int64_t c = 0; c < 3; ++c)
                out.image.data[static_cast<size_t>((c * S + y) * S + x)] = static_cast<float>(rgb[c]);
        }
    return out;
}

FolderDataset::FolderDataset(const std::string& path, int64_t image_size) : image_size_(image_size) {
    namespace fs = std::filesystem;
    check_runtime(fs::is_directory(path), "ingest_folder: not a directory: " + path);
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    num_classes_ = static_cast<int64_t>(class_dirs.size());
    for (int64_t label = 0; label < num_classes_; ++label) {
        std::vector<std::string> entries;
        for (const auto& e : fs::directory_iterator(fs::path(path) / class_dirs[static_cast<size_t>(label)]))
            if (e.is_regular_file()) entries.push_back(e.path().string());
        std::sort(entries.begin(), entries.end());
        for (const auto& f : entries) files_.emplace_back(f, label);
    }
    check_runtime(!files_.empty(), "ingest_folder: empty dataset under " + path);
}

LabeledImage FolderDataset::at(int64_t index) const {
    check_range(index >= 0 && index < size(), "FolderDataset: index out of range");
    const auto& [file, label] = files_[static_cast<size_t>(index)];
    LabeledImage out;
    out.label = label;
    try {
        out.image = load_ppm(file, image_size_);
    } catch (const std::exception& e) {
        std::cerr << "warning: skipping unreadable image " << file << " (" << e.what() << ")\n";
        // fall back to a black frame so indexing stays stable
        out.image = Tensor<float>::full({3, image_size_, image_size_}, -1.0f);
    }
    return out;
}

}  // namespace dar
