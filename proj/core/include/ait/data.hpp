#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "ait/tensor.hpp"

namespace ait {

enum class Split { train, test };

/// Images quantized to 8 bits; pixel values are read back as v / 255 in [0, 1].
struct LabeledImageSet {
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::size_t class_count = 2;
    std::vector<std::uint8_t> pixels;  // count x H x W x C, row-major
    std::vector<int> labels;
    Split split = Split::train;

    std::size_t image_size() const { return height * width * channels; }
    /// [H x W x C] image i in [0, 1].
    Tensor image(std::size_t i) const;
    /// [n x H x W x C] stack of the given samples.
    Tensor images(std::span<const std::size_t> indices) const;
    /// Samples [begin, end) as a new set.
    LabeledImageSet subset(std::size_t begin, std::size_t end) const;
};

/// Rounds v in [0, 1] to the nearest 8-bit level.
std::uint8_t quantize_pixel(double v);

struct TriangleOptions {
    double blob_sigma = 1.2;
    /// max_i |side_i - mean| / mean at or below which three centers count as equilateral.
    double tolerance = 0.05;
    /// Negatives are redrawn until their side spread exceeds this value.
    double negative_margin = 0.15;
    double min_radius_frac = 0.18;
    double max_radius_frac = 0.40;
    double min_separation = 6.0;
};

/// Largest relative deviation of the three side lengths from their mean.
double side_spread(const std::array<std::array<double, 2>, 3>& centers);

/// Three Gaussian point clusters on a side x side grayscale canvas; label 1
/// iff the cluster centers form an equilateral triangle. Exactly
/// floor(count / 2) positives.
LabeledImageSet gen_triangle(std::size_t count, std::size_t side, std::uint64_t seed,
                             const TriangleOptions& options = {});

/// One blob per image; label 0 when its center lies in the left half.
LabeledImageSet gen_two_blob(std::size_t count, std::size_t side, std::uint64_t seed, double blob_sigma = 1.5);

inline constexpr std::array<char, 8> kDatasetMagic = {'A', 'I', 'T', 'D', 'A', 'T', 'A', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 8 + 6 * 4;

struct DatasetHeader {
    std::uint32_t version = kDatasetVersion;
    std::uint32_t count = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    std::uint32_t class_count = 0;
};

/// Encodes a set in the AITDATA1 layout (little-endian header, u8 pixels, u8 labels).
std::vector<std::uint8_t> encode_dataset(const LabeledImageSet& set);
LabeledImageSet decode_dataset(std::span<const std::uint8_t> bytes, Split split = Split::train);
void store_dataset(const std::filesystem::path& path, const LabeledImageSet& set);
LabeledImageSet load_dataset(const std::filesystem::path& path, Split split = Split::train);

struct AugmentFlags {
    bool shuffle = true;
    bool hflip = false;
    bool normalize = false;
    Scalar mean = 0;
    Scalar stddev = 1;
};

struct Batch {
    Tensor images;  // [n x H x W x C]
    std::vector<int> labels;
    std::vector<std::size_t> indices;
};

/// Per-epoch batches; order and flips are pure functions of (seed, epoch).
class BatchStream {
   public:
    BatchStream(const LabeledImageSet& set, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                AugmentFlags flags = {});

    std::size_t size() const { return batches_; }
    Batch batch(std::size_t index) const;
    const std::vector<std::size_t>& order() const { return order_; }

   private:
    const LabeledImageSet* set_;
    std::size_t batch_size_;
    std::size_t batches_;
    AugmentFlags flags_;
    std::vector<std::size_t> order_;
    std::vector<unsigned char> flip_;
};

/// Mixes a seed with extra words into an independent 64-bit stream seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace ait
