#include "dar/ppm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dar {

void export_image(const Tensor<float>& image, const std::string& path) {
    check_arg(image.rank() == 3 && image.dim(0) == 3, "export_image: expected [3, H, W]");
    const int64_t H = image.dim(1), W = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    check_runtime(out.good(), "export_image: cannot open " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                double v = static_cast<double>(image.data[static_cast<size_t>((c * H + y) * W + x)]);
                double u = (v + 1.0) * 127.5;
                // round half away from zero, then clamp
                double r = u >= 0.0 ? std::floor(u + 0.5) : std::ceil(u - 0.5);
                if (r < 0.0) r = 0.0;
                if (r > 255.0) r = 255.0;
                row[static_cast<size_t>(x * 3 + c)] = static_cast<unsigned char>(r);
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    check_runtime(out.good(), "export_image: write failed for " + path);
}

namespace {

int next_token(std::istream& in) {
    // skips whitespace and '#' comment lines in the PPM header
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    check_runtime(ch != EOF, "load_ppm: truncated header");
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = in.get();
    }
    return value;
}

}  // namespace

Tensor<float> load_ppm(const std::string& path, int64_t image_size) {
    std::ifstream in(path, std::ios::binary);
    check_runtime(in.good(), "load_ppm: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    check_runtime(m0 == 'P' && m1 == '6', "load_ppm: not a binary PPM (P6): " + path);
    const int64_t W = next_token(in);
    const int64_t H = next_token(in);
    const int64_t maxval = next_token(in);
    check_runtime(W > 0 && H > 0, "load_ppm: bad dimensions");
    check_runtime(maxval == 255, "load_ppm: only maxval 255 supported");
    std::vector<unsigned char> bytes(static_cast<size_t>(W * H * 3));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    check_runtime(in.gcount() == static_cast<std::streamsize>(bytes.size()), "load_ppm: truncated pixel data");

    // center crop to square
    const int64_t side = std::min(W, H);
    const int64_t x0 = (W - side) / 2, y0 = (H - side) / 2;
    const int64_t S = image_size > 0 ? image_size : side;
    Tensor<float> img({3, S, S});
    for (int64_t y = 0; y < S; ++y) {
        for (int64_t x = 0; x < S; ++x) {
            // nearest-neighbor sample inside the crop
            const int64_t sy = y0 + std::min(side - 1, (y * side) / S);
            const int64_t sx = x0 + std::min(side - 1, (x * side) / S);
            for (int64_t c = 0; c < 3; ++c) {
                const double b = static_cast<double>(bytes[static_cast<size_t>((sy * W + sx) * 3 + c)]);
                img.data[static_cast<size_t>((c * S + y) * S + x)] = static_cast<float>(b / 127.5 - 1.0);
            }
        }
    }
    return img;
}

}  // namespace dar
