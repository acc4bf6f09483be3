#include "pdro/image.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pdro/errors.hpp"

namespace pdro {

namespace {

constexpr std::uint32_t kIdxImagesU8 = 0x00000803;
constexpr std::uint32_t kIdxLabelsU8 = 0x00000801;
constexpr std::uint32_t kIdxImagesF64 = 0x00000E03;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated IDX header in " + path.string());
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

double read_be_f64(const unsigned char* b) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits = (bits << 8) | b[i];
    return std::bit_cast<double>(bits);
}

void write_be_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Row-major 8x8 orthonormal DCT-II basis: basis[u][x] = c(u) cos((2x+1) u pi / 16).
const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> b{};
        for (int u = 0; u < 8; ++u) {
            const double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x)
                b[u][x] = c * std::cos((2.0 * x + 1.0) * u * std::numbers::pi / 16.0);
        }
        return b;
    }();
    return basis;
}

constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

} // namespace

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_(height * width, fill) {
    if (height == 0 || width == 0) throw DimensionError("image dimensions must be positive");
}

Image::Image(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (height == 0 || width == 0) throw DimensionError("image dimensions must be positive");
    if (pixels_.size() != height * width)
        throw DimensionError("pixel count " + std::to_string(pixels_.size()) + " != " +
                             std::to_string(height) + "x" + std::to_string(width));
}

bool Image::in_range() const noexcept {
    return std::all_of(pixels_.begin(), pixels_.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

void Dataset::check() const {
    if (class_count < 1) throw ConsistencyError("class_count must be positive");
    if (!group_ids.empty() && group_ids.size() != examples.size())
        throw ConsistencyError("group id count does not match example count");
    if (examples.empty()) return;
    const Image& first = examples.front().image;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        if (!ex.image.same_shape(first))
            throw ConsistencyError("example " + std::to_string(i) + " has a different shape");
        if (ex.label < 0 || ex.label >= class_count)
            throw ConsistencyError("example " + std::to_string(i) + " has label " +
                                   std::to_string(ex.label) + " outside [0, " +
                                   std::to_string(class_count) + ")");
    }
}

Dataset Dataset::head(std::size_t count) const {
    Dataset out;
    out.class_count = class_count;
    count = std::min(count, examples.size());
    out.examples.assign(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(count));
    if (has_groups())
        out.group_ids.assign(group_ids.begin(), group_ids.begin() + static_cast<std::ptrdiff_t>(count));
    return out;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, int class_count) {
    auto img_in = open_in(images_path);
    const auto img_magic = read_be32(img_in, images_path);
    if (img_magic != kIdxImagesU8 && img_magic != kIdxImagesF64) {
        std::ostringstream msg;
        msg << "bad IDX image magic 0x" << std::hex << img_magic << " in " << images_path.string();
        throw FormatError(msg.str());
    }
    const std::size_t count = read_be32(img_in, images_path);
    const std::size_t rows = read_be32(img_in, images_path);
    const std::size_t cols = read_be32(img_in, images_path);
    if (rows == 0 || cols == 0) throw FormatError("IDX image dimensions must be positive");

    auto lbl_in = open_in(labels_path);
    const auto lbl_magic = read_be32(lbl_in, labels_path);
    if (lbl_magic != kIdxLabelsU8) {
        std::ostringstream msg;
        msg << "bad IDX label magic 0x" << std::hex << lbl_magic << " in " << labels_path.string();
        throw FormatError(msg.str());
    }
    const std::size_t label_count = read_be32(lbl_in, labels_path);
    if (label_count != count)
        throw ConsistencyError("image file holds " + std::to_string(count) +
                               " images but label file holds " + std::to_string(label_count));

    const std::size_t n = rows * cols;
    const std::size_t elem = img_magic == kIdxImagesU8 ? 1 : 8;
    std::vector<unsigned char> raw(count * n * elem);
    if (!img_in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw FormatError("truncated IDX image payload in " + images_path.string());
    std::vector<unsigned char> labels(count);
    if (!lbl_in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(count)))
        throw FormatError("truncated IDX label payload in " + labels_path.string());

    Dataset d;
    d.class_count = class_count;
    d.examples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> px(n);
        if (elem == 1) {
            for (std::size_t j = 0; j < n; ++j) px[j] = raw[i * n + j] / 255.0;
        } else {
            for (std::size_t j = 0; j < n; ++j) px[j] = read_be_f64(&raw[(i * n + j) * 8]);
        }
        d.examples.push_back({Image(rows, cols, std::move(px)), static_cast<int>(labels[i])});
    }
    d.check();
    return d;
}

void save_idx(const Dataset& d, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path, IdxPixelType type) {
    d.check();
    if (d.empty()) throw ParameterError("cannot write an empty dataset");
    const auto& first = d.examples.front().image;
    auto img = open_out(images_path);
    write_be32(img, type == IdxPixelType::u8 ? kIdxImagesU8 : kIdxImagesF64);
    write_be32(img, static_cast<std::uint32_t>(d.size()));
    write_be32(img, static_cast<std::uint32_t>(first.height()));
    write_be32(img, static_cast<std::uint32_t>(first.width()));
    for (const auto& ex : d.examples) {
        for (double v : ex.image.pixels()) {
            if (type == IdxPixelType::u8) {
                const char b = static_cast<char>(to_byte(v));
                img.write(&b, 1);
            } else {
                write_be_f64(img, v);
            }
        }
    }
    auto lbl = open_out(labels_path);
    write_be32(lbl, kIdxLabelsU8);
    write_be32(lbl, static_cast<std::uint32_t>(d.size()));
    for (const auto& ex : d.examples) {
        const char b = static_cast<char>(ex.label);
        lbl.write(&b, 1);
    }
    if (!img || !lbl) throw IoError("failed writing IDX pair " + images_path.string());
}

void write_pgm(const Image& x, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "P5\n" << x.width() << ' ' << x.height() << "\n255\n";
    for (double v : x.pixels()) {
        const char b = static_cast<char>(to_byte(v));
        out.write(&b, 1);
    }
    if (!out) throw IoError("failed writing " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (magic != "P5" || maxval != 255 || !in) throw FormatError("not an 8-bit P5 PGM: " + path.string());
    in.get();
    std::vector<unsigned char> raw(width * height);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw FormatError("truncated PGM payload in " + path.string());
    std::vector<double> px(raw.size());
    std::transform(raw.begin(), raw.end(), px.begin(), [](unsigned char b) { return b / 255.0; });
    return Image(height, width, std::move(px));
}

void validate_in_place(Image& x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]))
            throw NumericError("non-finite pixel at index " + std::to_string(i));
        x[i] = std::clamp(x[i], 0.0, 1.0);
    }
}

Image validate_image(const Image& x) {
    Image out = x;
    validate_in_place(out);
    return out;
}

Image quantize_8bit(const Image& x) {
    Image out = validate_image(x);
    for (double& v : out.pixels()) v = std::round(v * 255.0) / 255.0;
    return out;
}

double lp_distance(const Image& x, const Image& y, Norm p) {
    if (!x.same_shape(y)) throw DimensionError("lp_distance: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(x[i] - y[i]);
        switch (p) {
        case Norm::l1: acc += d; break;
        case Norm::l2: acc += d * d; break;
        case Norm::linf: acc = std::max(acc, d); break;
        }
    }
    return p == Norm::l2 ? std::sqrt(acc) : acc;
}

Image bit_depth_reduce(const Image& x, int bits) {
    if (bits < 1 || bits > 8)
        throw ParameterError("bit depth must lie in [1, 8], got " + std::to_string(bits));
    const double levels = std::ldexp(1.0, bits) - 1.0;
    Image out = validate_image(x);
    for (double& v : out.pixels()) v = std::round(v * levels) / levels;
    return out;
}

std::vector<double> jpeg_quant_table(int quality) {
    if (quality < 1 || quality > 100)
        throw ParameterError("JPEG quality must lie in [1, 100], got " + std::to_string(quality));
    const double scale = quality < 50 ? 50.0 / quality : 2.0 - quality / 50.0;
    std::vector<double> table(64);
    for (int i = 0; i < 64; ++i)
        table[i] = std::max(1.0, std::floor(kLuminanceTable[i] * scale + 0.5));
    return table;
}

void dct8x8(std::span<const double, 64> in, std::span<double, 64> out) {
    const auto& b = dct_basis();
    std::array<double, 64> tmp{};
    for (int r = 0; r < 8; ++r)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int c = 0; c < 8; ++c) s += b[v][c] * in[r * 8 + c];
            tmp[r * 8 + v] = s;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int r = 0; r < 8; ++r) s += b[u][r] * tmp[r * 8 + v];
            out[u * 8 + v] = s;
        }
}

void idct8x8(std::span<const double, 64> in, std::span<double, 64> out) {
    const auto& b = dct_basis();
    std::array<double, 64> tmp{};
    for (int u = 0; u < 8; ++u)
        for (int c = 0; c < 8; ++c) {
            double s = 0.0;
            for (int v = 0; v < 8; ++v) s += b[v][c] * in[u * 8 + v];
            tmp[u * 8 + c] = s;
        }
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            double s = 0.0;
            for (int u = 0; u < 8; ++u) s += b[u][r] * tmp[u * 8 + c];
            out[r * 8 + c] = s;
        }
}

Image jpeg_like_compress(const Image& x, int quality) {
    const auto table = jpeg_quant_table(quality);
    const Image src = validate_image(x);
    const std::size_t h = src.height(), w = src.width();
    const std::size_t ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;

    // Samples are handled on the 8-bit scale the luminance table is defined for.
    std::vector<double> padded(ph * pw);
    for (std::size_t r = 0; r < ph; ++r)
        for (std::size_t c = 0; c < pw; ++c)
            padded[r * pw + c] = (src(std::min(r, h - 1), std::min(c, w - 1)) - 0.5) * 255.0;

    std::array<double, 64> block{}, coef{};
    for (std::size_t br = 0; br < ph; br += 8)
        for (std::size_t bc = 0; bc < pw; bc += 8) {
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c) block[r * 8 + c] = padded[(br + r) * pw + bc + c];
            dct8x8(block, coef);
            for (int i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / table[i]) * table[i];
            idct8x8(coef, block);
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c) padded[(br + r) * pw + bc + c] = block[r * 8 + c];
        }

    Image out(h, w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            out(r, c) = std::clamp(padded[r * pw + c] / 255.0 + 0.5, 0.0, 1.0);
    return out;
}

} // namespace pdro
