#include "emdl/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>

namespace emdl {

namespace {

// Skips PNM whitespace and `#` comment lines, then parses one integer.
int pnm_int(std::istream& in) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw Error("malformed PNM header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > (1 << 24)) throw Error("PNM header value out of range");
        c = in.get();
    }
    return v;
}

} // namespace

RasterImage load_pnm(std::istream& in) {
    char m0 = static_cast<char>(in.get());
    char m1 = static_cast<char>(in.get());
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw Error("unsupported raster format (want binary PGM P5 or PPM P6)");
    RasterImage img;
    img.channels = m1 == '5' ? 1 : 3;
    img.width = pnm_int(in);
    img.height = pnm_int(in);
    int maxval = pnm_int(in);
    if (img.width < 1 || img.height < 1) throw Error("PNM dimensions must be positive");
    if (maxval != 255) throw Error("PNM maxval must be 255");
    // header ends with exactly one whitespace byte, already consumed by pnm_int

    size_t n = static_cast<size_t>(img.width) * img.height * img.channels;
    img.pixels.resize(n);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw Error("truncated PNM payload");
    return img;
}

RasterImage load_pnm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return load_pnm(in);
}

Tensor preprocess(const RasterImage& img, int target) {
    if (target < 1) throw Error("preprocess target must be positive");
    if (img.channels != 1 && img.channels != 3)
        throw Error("preprocess expects 1 or 3 channel raster");
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<size_t>(img.width) * img.height * img.channels)
        throw Error("raster dimensions do not match pixel payload");

    Tensor out = Tensor::zeros_f32(Shape{1, target, target, 3});
    auto dst = out.f32();
    const double sy = static_cast<double>(img.height) / target;
    const double sx = static_cast<double>(img.width) / target;

    for (int y = 0; y < target; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double dy = fy - y0;
        int y0c = std::clamp(y0, 0, img.height - 1);
        int y1c = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < target; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double dx = fx - x0;
            int x0c = std::clamp(x0, 0, img.width - 1);
            int x1c = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) {
                const int sc = img.channels == 1 ? 0 : c;
                auto at = [&](int yy, int xx) -> double {
                    return img.pixels[(static_cast<size_t>(yy) * img.width + xx) * img.channels +
                                      sc];
                };
                double top = at(y0c, x0c) * (1.0 - dx) + at(y0c, x1c) * dx;
                double bot = at(y1c, x0c) * (1.0 - dx) + at(y1c, x1c) * dx;
                double v = top * (1.0 - dy) + bot * dy;
                dst[(static_cast<size_t>(y) * target + x) * 3 + c] =
                    static_cast<float>(v / 127.5 - 1.0);
            }
        }
    }
    return out;
}

Tensor load_input(const std::string& path, const Shape& input_shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    in.seekg(0);

    if (std::memcmp(magic, "RTEN", 4) == 0) {
        Tensor t = read_raw_tensor(in);
        if (t.dtype() != DType::F32)
            throw Error(path + ": RTEN input must be F32");
        if (t.shape().rank() == 3) {
            // promote HWC to 1xHxWxC
            Shape s{1, t.shape()[0], t.shape()[1], t.shape()[2]};
            std::vector<float> vals(t.f32().begin(), t.f32().end());
            t = Tensor::from_f32(s, std::move(vals));
        }
        if (t.shape() != input_shape)
            throw Error(path + ": tensor shape " + t.shape().str() +
                        " does not match model input " + input_shape.str());
        return t;
    }
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        RasterImage img = load_pnm(in);
        if (input_shape.rank() != 4 || input_shape[1] != input_shape[2] || input_shape[3] != 3)
            throw Error("model input " + input_shape.str() +
                        " is not square NHWC; cannot preprocess " + path);
        return preprocess(img, input_shape[1]);
    }
    throw Error(path + ": unsupported input format (want RTEN, PPM P6 or PGM P5)");
}

} // namespace emdl
