#include "ait/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>

#include "ait/error.hpp"

namespace ait {

namespace {

using Point = std::array<double, 2>;  // (row, col)

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void render_blobs(std::span<std::uint8_t> canvas, std::size_t side, std::span<const Point> centers, double sigma) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            double v = 0;
            for (const auto& p : centers) {
                const double dr = static_cast<double>(r) - p[0], dc = static_cast<double>(c) - p[1];
                v += std::exp(-(dr * dr + dc * dc) * inv);
            }
            canvas[r * side + c] = quantize_pixel(std::min(v, 1.0));
        }
}

double distance(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
    return v;
}

std::uint32_t narrow_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFull) throw FormatError(std::string(what) + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

std::uint8_t quantize_pixel(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Tensor LabeledImageSet::image(std::size_t i) const {
    const std::size_t sz = image_size();
    std::vector<Scalar> values(sz);
    for (std::size_t j = 0; j < sz; ++j) values[j] = static_cast<Scalar>(pixels[i * sz + j]) / Scalar(255);
    return Tensor({height, width, channels}, std::move(values));
}

Tensor LabeledImageSet::images(std::span<const std::size_t> indices) const {
    const std::size_t sz = image_size();
    std::vector<Scalar> values(indices.size() * sz);
    for (std::size_t n = 0; n < indices.size(); ++n)
        for (std::size_t j = 0; j < sz; ++j)
            values[n * sz + j] = static_cast<Scalar>(pixels[indices[n] * sz + j]) / Scalar(255);
    return Tensor({indices.size(), height, width, channels}, std::move(values));
}

LabeledImageSet LabeledImageSet::subset(std::size_t begin, std::size_t end) const {
    end = std::min(end, count);
    begin = std::min(begin, end);
    LabeledImageSet out = *this;
    out.count = end - begin;
    out.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(begin * image_size()),
                      pixels.begin() + static_cast<std::ptrdiff_t>(end * image_size()));
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

double side_spread(const std::array<std::array<double, 2>, 3>& centers) {
    const std::array<double, 3> sides = {distance(centers[0], centers[1]), distance(centers[1], centers[2]),
                                         distance(centers[2], centers[0])};
    const double mean = (sides[0] + sides[1] + sides[2]) / 3.0;
    if (mean <= 0) return 1.0;
    double worst = 0;
    for (auto s : sides) worst = std::max(worst, std::abs(s - mean) / mean);
    return worst;
}

LabeledImageSet gen_triangle(std::size_t count, std::size_t side, std::uint64_t seed, const TriangleOptions& options) {
    if (side < 16) throw ParameterError("triangle images need side >= 16, got " + std::to_string(side));
    if (options.negative_margin < options.tolerance) {
        throw ParameterError("triangle negative margin must not be below the equilateral tolerance");
    }
    LabeledImageSet set;
    set.count = count;
    set.height = set.width = side;
    set.channels = 1;
    set.class_count = 2;
    set.pixels.assign(count * side * side, 0);
    set.labels.assign(count, 0);
    std::mt19937_64 rng(mix_seed(seed, 0x7121));
    std::fill_n(set.labels.begin(), count / 2, 1);
    std::shuffle(set.labels.begin(), set.labels.end(), rng);

    const double lo = 2.0 * options.blob_sigma, hi = static_cast<double>(side) - 1.0 - 2.0 * options.blob_sigma;
    std::uniform_real_distribution<double> coord(lo, hi);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> radius(options.min_radius_frac * static_cast<double>(side),
                                                  options.max_radius_frac * static_cast<double>(side));
    auto inside = [&](const Point& p) { return p[0] >= lo && p[0] <= hi && p[1] >= lo && p[1] <= hi; };

    for (std::size_t i = 0; i < count; ++i) {
        std::array<Point, 3> centers{};
        if (set.labels[i] == 1) {
            for (;;) {
                const double r = radius(rng), theta = angle(rng);
                const Point c = {coord(rng), coord(rng)};
                bool ok = true;
                for (int v = 0; v < 3; ++v) {
                    const double a = theta + 2.0 * std::numbers::pi * v / 3.0;
                    centers[v] = {c[0] + r * std::sin(a), c[1] + r * std::cos(a)};
                    ok = ok && inside(centers[v]);
                }
                if (ok) break;
            }
        } else {
            for (;;) {
                for (auto& p : centers) p = {coord(rng), coord(rng)};
                const double dmin = std::min({distance(centers[0], centers[1]), distance(centers[1], centers[2]),
                                              distance(centers[2], centers[0])});
                if (dmin >= options.min_separation && side_spread(centers) > options.negative_margin) break;
            }
        }
        render_blobs(std::span(set.pixels).subspan(i * side * side, side * side), side, centers, options.blob_sigma);
    }
    return set;
}

LabeledImageSet gen_two_blob(std::size_t count, std::size_t side, std::uint64_t seed, double blob_sigma) {
    if (side < 8) throw ParameterError("two-blob images need side >= 8, got " + std::to_string(side));
    LabeledImageSet set;
    set.count = count;
    set.height = set.width = side;
    set.channels = 1;
    set.class_count = 2;
    set.pixels.assign(count * side * side, 0);
    set.labels.assign(count, 0);
    std::mt19937_64 rng(mix_seed(seed, 0xB10B));
    std::fill_n(set.labels.begin(), count / 2, 1);
    std::shuffle(set.labels.begin(), set.labels.end(), rng);
    const double half = static_cast<double>(side) / 2.0;
    const double margin = std::max(1.0, blob_sigma);
    std::uniform_real_distribution<double> row(margin, static_cast<double>(side) - 1.0 - margin);
    std::uniform_real_distribution<double> left(margin, half - 1.0);
    std::uniform_real_distribution<double> right(half + 0.5, static_cast<double>(side) - 1.0 - margin);
    for (std::size_t i = 0; i < count; ++i) {
        const Point c = {row(rng), set.labels[i] == 0 ? left(rng) : right(rng)};
        render_blobs(std::span(set.pixels).subspan(i * side * side, side * side), side, std::span(&c, 1), blob_sigma);
    }
    return set;
}

std::vector<std::uint8_t> encode_dataset(const LabeledImageSet& set) {
    if (set.pixels.size() != set.count * set.image_size() || set.labels.size() != set.count) {
        throw FormatError("dataset buffers do not match its declared extents");
    }
    std::vector<std::uint8_t> out;
    out.reserve(kDatasetHeaderBytes + set.pixels.size() + set.count);
    out.resize(kDatasetMagic.size());
    std::memcpy(out.data(), kDatasetMagic.data(), kDatasetMagic.size());
    put_u32(out, kDatasetVersion);
    put_u32(out, narrow_u32(set.count, "count"));
    put_u32(out, narrow_u32(set.height, "height"));
    put_u32(out, narrow_u32(set.width, "width"));
    put_u32(out, narrow_u32(set.channels, "channels"));
    put_u32(out, narrow_u32(set.class_count, "class count"));
    out.insert(out.end(), set.pixels.begin(), set.pixels.end());
    for (int label : set.labels) {
        if (label < 0 || label > 255) throw FormatError("label " + std::to_string(label) + " does not fit in u8");
        out.push_back(static_cast<std::uint8_t>(label));
    }
    return out;
}

LabeledImageSet decode_dataset(std::span<const std::uint8_t> bytes, Split split) {
    if (bytes.size() < kDatasetHeaderBytes) {
        throw FormatError("truncated dataset header: expected " + std::to_string(kDatasetHeaderBytes) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    if (!std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), bytes.begin())) {
        throw FormatError("bad dataset magic (expected AITDATA1)");
    }
    DatasetHeader h;
    h.version = get_u32(bytes, 8);
    h.count = get_u32(bytes, 12);
    h.height = get_u32(bytes, 16);
    h.width = get_u32(bytes, 20);
    h.channels = get_u32(bytes, 24);
    h.class_count = get_u32(bytes, 28);
    if (h.version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(h.version));
    if (h.height == 0 || h.width == 0 || h.channels == 0 || h.class_count == 0) {
        throw FormatError("dataset extents must be positive");
    }
    const std::size_t image = std::size_t{h.height} * h.width * h.channels;
    const std::size_t expected = kDatasetHeaderBytes + std::size_t{h.count} * image + h.count;
    if (bytes.size() != expected) {
        throw FormatError("dataset length mismatch: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    LabeledImageSet set;
    set.count = h.count;
    set.height = h.height;
    set.width = h.width;
    set.channels = h.channels;
    set.class_count = h.class_count;
    set.split = split;
    const auto pix = bytes.subspan(kDatasetHeaderBytes, std::size_t{h.count} * image);
    set.pixels.assign(pix.begin(), pix.end());
    const auto labels = bytes.subspan(kDatasetHeaderBytes + pix.size());
    set.labels.reserve(h.count);
    for (auto l : labels) {
        if (l >= h.class_count) {
            throw FormatError("label " + std::to_string(l) + " outside class count " + std::to_string(h.class_count));
        }
        set.labels.push_back(l);
    }
    return set;
}

void store_dataset(const std::filesystem::path& path, const LabeledImageSet& set) {
    const auto bytes = encode_dataset(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("short write to " + path.string());
}

LabeledImageSet load_dataset(const std::filesystem::path& path, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_dataset(bytes, split);
}

BatchStream::BatchStream(const LabeledImageSet& set, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                         AugmentFlags flags)
    : set_(&set), batch_size_(batch_size), flags_(flags) {
    if (batch_size == 0) throw ParameterError("batch size must be >= 1");
    if (flags.normalize && !(flags.stddev > 0)) throw ParameterError("normalization stddev must be > 0");
    batches_ = (set.count + batch_size - 1) / batch_size;
    order_.resize(set.count);
    for (std::size_t i = 0; i < set.count; ++i) order_[i] = i;
    if (flags.shuffle) {
        std::mt19937_64 rng(mix_seed(seed, 0x5EED, epoch));
        std::shuffle(order_.begin(), order_.end(), rng);
    }
    flip_.assign(set.count, 0);
    if (flags.hflip) {
        std::mt19937_64 rng(mix_seed(seed, 0xF11F, epoch));
        std::bernoulli_distribution coin(0.5);
        for (auto& f : flip_) f = coin(rng) ? 1 : 0;
    }
}

Batch BatchStream::batch(std::size_t index) const {
    if (index >= batches_) throw ParameterError("batch index " + std::to_string(index) + " out of range");
    const std::size_t begin = index * batch_size_, end = std::min(set_->count, begin + batch_size_);
    Batch b;
    b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end));
    b.images = set_->images(b.indices);
    for (auto i : b.indices) b.labels.push_back(set_->labels[i]);
    const std::size_t h = set_->height, w = set_->width, c = set_->channels;
    Scalar* px = b.images.ptr();
    for (std::size_t n = 0; n < b.indices.size(); ++n) {
        Scalar* img = px + n * h * w * c;
        if (flip_[begin + n]) {
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t col = 0; col < w / 2; ++col)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        std::swap(img[(r * w + col) * c + ch], img[(r * w + (w - 1 - col)) * c + ch]);
        }
        if (flags_.normalize) {
            for (std::size_t j = 0; j < h * w * c; ++j) img[j] = (img[j] - flags_.mean) / flags_.stddev;
        }
    }
    return b;
}

}  // namespace ait
