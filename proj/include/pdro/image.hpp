#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pdro {

/// Grayscale image, row-major, intensities normalized to [0, 1].
///
/// The pixel buffer is also used as the working iterate of the attacks, so the
/// range invariant is established by `validate_image` rather than on every write.
class Image {
public:
    Image() = default;
    Image(std::size_t height, std::size_t width, double fill = 0.0);
    Image(std::size_t height, std::size_t width, std::vector<double> pixels);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    double& operator()(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }
    double operator()(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }
    double& operator[](std::size_t i) { return pixels_[i]; }
    double operator[](std::size_t i) const { return pixels_[i]; }

    std::span<double> pixels() noexcept { return pixels_; }
    std::span<const double> pixels() const noexcept { return pixels_; }
    const std::vector<double>& data() const noexcept { return pixels_; }

    /// True when every pixel is finite and inside [0, 1].
    bool in_range() const noexcept;

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> pixels_;
};

struct LabeledExample {
    Image image;
    int label = 0;
};

/// Ordered examples sharing one image shape; `group_ids` is either empty or
/// holds one group id per example.
struct Dataset {
    std::vector<LabeledExample> examples;
    int class_count = 10;
    std::vector<int> group_ids;

    std::size_t size() const noexcept { return examples.size(); }
    bool empty() const noexcept { return examples.empty(); }
    bool has_groups() const noexcept { return !group_ids.empty(); }

    /// Throws ConsistencyError when shapes, labels or group ids disagree.
    void check() const;

    /// First `count` examples (all of them when count exceeds the size).
    Dataset head(std::size_t count) const;
};

// -- ingestion and export ---------------------------------------------------------------

/// Reads an IDX image/label pair. Images may be unsigned bytes (magic 2051, scaled by
/// 1/255) or big-endian doubles (magic 0x00000E03, read verbatim).
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, int class_count = 10);

enum class IdxPixelType { u8, f64 };

/// Writes an IDX pair. `u8` rounds each pixel to the nearest 1/255 step.
void save_idx(const Dataset& d, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path, IdxPixelType type = IdxPixelType::u8);

/// Binary PGM (P5, maxval 255); pixels are rounded to the 8-bit grid.
void write_pgm(const Image& x, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

// -- pixel operations -------------------------------------------------------------------

/// Clamps every pixel to [0, 1]. Throws NumericError on a non-finite pixel.
Image validate_image(const Image& x);
void validate_in_place(Image& x);

/// Rounds to the nearest multiple of 1/255.
Image quantize_8bit(const Image& x);

enum class Norm { l1, l2, linf };

double lp_distance(const Image& x, const Image& y, Norm p);

/// Maps v to round(v (2^bits - 1)) / (2^bits - 1); bits must lie in [1, 8].
Image bit_depth_reduce(const Image& x, int bits);

/// Baseline-JPEG quantization round trip on 8x8 blocks (no entropy coding).
/// quality must lie in [1, 100].
Image jpeg_like_compress(const Image& x, int quality);

/// Standard luminance table scaled for `quality`, row-major 8x8.
std::vector<double> jpeg_quant_table(int quality);

/// Orthonormal 8x8 DCT-II and its inverse, row-major.
void dct8x8(std::span<const double, 64> in, std::span<double, 64> out);
void idct8x8(std::span<const double, 64> in, std::span<double, 64> out);

} // namespace pdro
