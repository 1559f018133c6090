#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ait/data.hpp"
#include "ait/error.hpp"

using namespace ait;

namespace {

struct Centroid {
    double row = 0, col = 0;
};

// Flood-fills pixels above half intensity and returns intensity-weighted
// centroids of the 4-connected components.
std::vector<Centroid> blob_centroids(const LabeledImageSet& set, std::size_t i) {
    const std::size_t h = set.height, w = set.width;
    const std::uint8_t* px = set.pixels.data() + i * h * w;
    std::vector<int> seen(h * w, 0);
    std::vector<Centroid> out;
    for (std::size_t s = 0; s < h * w; ++s) {
        if (seen[s] || px[s] < 128) continue;
        double sw = 0, sr = 0, sc = 0;
        std::vector<std::size_t> stack = {s};
        seen[s] = 1;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t r = p / w, c = p % w;
            sw += px[p];
            sr += px[p] * static_cast<double>(r);
            sc += px[p] * static_cast<double>(c);
            auto visit = [&](std::size_t q) {
                if (!seen[q] && px[q] >= 128) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            };
            if (r > 0) visit(p - w);
            if (r + 1 < h) visit(p + w);
            if (c > 0) visit(p - 1);
            if (c + 1 < w) visit(p + 1);
        }
        out.push_back({sr / sw, sc / sw});
    }
    return out;
}

double spread_of(const std::vector<Centroid>& c) {
    const double d[3] = {std::hypot(c[0].row - c[1].row, c[0].col - c[1].col),
                         std::hypot(c[1].row - c[2].row, c[1].col - c[2].col),
                         std::hypot(c[2].row - c[0].row, c[2].col - c[0].col)};
    const double m = (d[0] + d[1] + d[2]) / 3;
    return std::max({std::abs(d[0] - m), std::abs(d[1] - m), std::abs(d[2] - m)}) / m;
}

}  // namespace

TEST(Triangle, Deterministic) {
    auto a = gen_triangle(40, 32, 7);
    auto b = gen_triangle(40, 32, 7);
    auto c = gen_triangle(40, 32, 8);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(a.pixels, c.pixels);
}

TEST(Triangle, BalancedLabels) {
    for (std::size_t n : {0, 1, 7, 100}) {
        auto s = gen_triangle(n, 32, 3);
        EXPECT_EQ(std::accumulate(s.labels.begin(), s.labels.end(), std::size_t{0}), n / 2);
        EXPECT_EQ(s.pixels.size(), n * 32 * 32);
    }
}

TEST(Triangle, LabelsAgreeWithCentroidGeometry) {
    auto s = gen_triangle(300, 32, 11);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < s.count; ++i) {
        auto c = blob_centroids(s, i);
        if (c.size() != 3) continue;  // touching blobs merge under the threshold
        ++checked;
        EXPECT_EQ(spread_of(c) <= 0.10 ? 1 : 0, s.labels[i]) << "image " << i << " spread " << spread_of(c);
    }
    EXPECT_GT(checked, 250u);
}

TEST(Triangle, SpreadOfEquilateralIsZero) {
    const double r = 5;
    std::array<std::array<double, 2>, 3> c{};
    for (int v = 0; v < 3; ++v) c[v] = {r * std::sin(2 * M_PI * v / 3), r * std::cos(2 * M_PI * v / 3)};
    EXPECT_NEAR(side_spread(c), 0, 1e-12);
    c[2][0] += 2;
    EXPECT_GT(side_spread(c), 0.05);
}

TEST(Triangle, SmallSideRejected) {
    EXPECT_THROW(gen_triangle(4, 15, 1), ParameterError);
    TriangleOptions bad;
    bad.negative_margin = 0.01;
    EXPECT_THROW(gen_triangle(4, 32, 1, bad), ParameterError);
}

TEST(TwoBlob, LabelIsHalfOfCentroid) {
    auto s = gen_two_blob(200, 16, 4);
    for (std::size_t i = 0; i < s.count; ++i) {
        auto c = blob_centroids(s, i);
        ASSERT_EQ(c.size(), 1u);
        EXPECT_EQ(c[0].col < 8.0 ? 0 : 1, s.labels[i]);
    }
    EXPECT_EQ(std::count(s.labels.begin(), s.labels.end(), 1), 100);
}

TEST(Dataset, RoundTripByteIdentical) {
    auto s = gen_triangle(10, 32, 2);
    auto bytes = encode_dataset(s);
    EXPECT_EQ(bytes.size(), kDatasetHeaderBytes + 10 * 32 * 32 + 10);
    auto back = decode_dataset(bytes);
    EXPECT_EQ(back.pixels, s.pixels);
    EXPECT_EQ(back.labels, s.labels);
    EXPECT_EQ(encode_dataset(back), bytes);
}

TEST(Dataset, EmptySet) {
    auto s = gen_two_blob(0, 16, 1);
    auto back = decode_dataset(encode_dataset(s));
    EXPECT_EQ(back.count, 0u);
    EXPECT_EQ(back.height, 16u);
}

TEST(Dataset, TruncationAndMagic) {
    auto bytes = encode_dataset(gen_two_blob(3, 16, 1));
    for (std::size_t cut : {std::size_t{4}, kDatasetHeaderBytes - 1, bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(decode_dataset(part), FormatError) << cut;
    }
    bytes[0] = 'X';
    EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(Dataset, FileRoundTrip) {
    auto s = gen_two_blob(5, 16, 9);
    const auto path = std::filesystem::temp_directory_path() / "ait_data_roundtrip.bin";
    store_dataset(path, s);
    auto back = load_dataset(path, Split::test);
    EXPECT_EQ(back.split, Split::test);
    EXPECT_EQ(back.pixels, s.pixels);
    std::filesystem::remove(path);
    EXPECT_THROW(load_dataset(path), IoError);
}

TEST(Pixels, Quantization) {
    EXPECT_EQ(quantize_pixel(0), 0);
    EXPECT_EQ(quantize_pixel(1), 255);
    EXPECT_EQ(quantize_pixel(2), 255);
    EXPECT_EQ(quantize_pixel(-1), 0);
    EXPECT_EQ(quantize_pixel(0.5), 128);
}

TEST(BatchStream, EpochIsPartition) {
    auto s = gen_two_blob(23, 16, 1);
    BatchStream stream(s, 5, 42, 0);
    EXPECT_EQ(stream.size(), 5u);
    std::multiset<std::size_t> seen;
    for (std::size_t b = 0; b < stream.size(); ++b) {
        auto batch = stream.batch(b);
        EXPECT_EQ(batch.images.dim(0), batch.labels.size());
        for (auto i : batch.indices) seen.insert(i);
    }
    EXPECT_EQ(seen.size(), 23u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 23u);
}

TEST(BatchStream, DeterministicPerEpoch) {
    auto s = gen_two_blob(30, 16, 1);
    AugmentFlags flags;
    flags.hflip = true;
    BatchStream a(s, 8, 5, 3, flags), b(s, 8, 5, 3, flags), c(s, 8, 5, 4, flags);
    EXPECT_EQ(a.order(), b.order());
    EXPECT_NE(a.order(), c.order());
    auto ba = a.batch(1), bb = b.batch(1);
    for (std::size_t i = 0; i < ba.images.numel(); ++i) EXPECT_EQ(ba.images[i], bb.images[i]);
}

TEST(BatchStream, NoShuffleKeepsOrder) {
    auto s = gen_two_blob(6, 16, 1);
    AugmentFlags flags;
    flags.shuffle = false;
    BatchStream stream(s, 4, 1, 0, flags);
    EXPECT_EQ(stream.order(), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
    auto batch = stream.batch(0);
    auto img = s.image(2);
    for (std::size_t j = 0; j < img.numel(); ++j) EXPECT_EQ(batch.images[2 * img.numel() + j], img[j]);
}

TEST(BatchStream, IdentityNormalizeAndFlip) {
    auto s = gen_two_blob(4, 16, 1);
    AugmentFlags plain, norm;
    plain.shuffle = norm.shuffle = false;
    norm.normalize = true;
    norm.mean = 0;
    norm.stddev = 1;
    auto a = BatchStream(s, 4, 1, 0, plain).batch(0);
    auto b = BatchStream(s, 4, 1, 0, norm).batch(0);
    for (std::size_t i = 0; i < a.images.numel(); ++i) EXPECT_EQ(a.images[i], b.images[i]);
}

TEST(Seeds, MixIsStable) {
    EXPECT_EQ(mix_seed(1, 2, 3), mix_seed(1, 2, 3));
    EXPECT_NE(mix_seed(1, 2, 3), mix_seed(1, 3, 2));
}
