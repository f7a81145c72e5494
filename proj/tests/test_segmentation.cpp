#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <queue>

#include "ragnet/dataio.hpp"
#include "ragnet/error.hpp"
#include "ragnet/segmentation.hpp"
#include "support.hpp"

using namespace ragnet;

namespace {

Image uniform_image(int w, int h, int channels, float v) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = channels;
    img.data.assign(static_cast<std::size_t>(w) * h * channels, v);
    return img;
}

// Independent flood fill: number of 4-connected components of each label.
std::vector<int> components_per_label(const Segmentation& seg) {
    const int w = seg.width, h = seg.height;
    std::vector<int> comps(static_cast<std::size_t>(seg.n_segments), 0);
    std::vector<char> seen(seg.labels.size(), 0);
    for (int start = 0; start < w * h; ++start) {
        if (seen[static_cast<std::size_t>(start)]) continue;
        const int lab = seg.labels[static_cast<std::size_t>(start)];
        ++comps[static_cast<std::size_t>(lab)];
        std::queue<int> q;
        q.push(start);
        seen[static_cast<std::size_t>(start)] = 1;
        while (!q.empty()) {
            const int p = q.front();
            q.pop();
            const int x = p % w, y = p / w;
            const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
                const int qn = n[1] * w + n[0];
                if (!seen[static_cast<std::size_t>(qn)] && seg.labels[static_cast<std::size_t>(qn)] == lab) {
                    seen[static_cast<std::size_t>(qn)] = 1;
                    q.push(qn);
                }
            }
        }
    }
    return comps;
}

void expect_valid_partition(const Segmentation& seg) {
    REQUIRE(seg.labels.size() == static_cast<std::size_t>(seg.width) * seg.height);
    std::vector<int> count(static_cast<std::size_t>(seg.n_segments), 0);
    for (auto l : seg.labels) {
        REQUIRE(l >= 0);
        REQUIRE(l < seg.n_segments);
        ++count[static_cast<std::size_t>(l)];
    }
    for (int c : count) CHECK(c > 0);
    for (int c : components_per_label(seg)) CHECK(c == 1);
    CHECK_NOTHROW(check_segmentation(seg));
}

}  // namespace

TEST_CASE("lab: reference colours") {
    const auto white = srgb_to_lab(1, 1, 1);
    CHECK(white[0] == doctest::Approx(100.0).epsilon(1e-4));
    CHECK(std::abs(white[1]) < 1e-3);
    CHECK(std::abs(white[2]) < 1e-3);
    const auto black = srgb_to_lab(0, 0, 0);
    CHECK(std::abs(black[0]) < 1e-9);
    const auto red = srgb_to_lab(1, 0, 0);
    CHECK(red[0] == doctest::Approx(53.24).epsilon(1e-3));
    CHECK(red[1] == doctest::Approx(80.09).epsilon(1e-3));
    CHECK(red[2] == doctest::Approx(67.20).epsilon(1e-3));
    const auto gray = image_to_lab(uniform_image(1, 1, 1, 0.25f));
    CHECK(gray[0][0] == doctest::Approx(25.0));
    CHECK(gray[0][1] == 0.0);
}

TEST_CASE("slic: uniform 100x100 with k=4 gives four equal quadrants") {
    SlicConfig cfg;
    cfg.target_k = 4;
    const auto seg = slic_segment(uniform_image(100, 100, 1, 0.5f), cfg);
    REQUIRE(seg.n_segments == 4);
    std::vector<int> count(4, 0);
    for (auto l : seg.labels) ++count[static_cast<std::size_t>(l)];
    for (int c : count) CHECK(c == 2500);
    CHECK(seg.at(0, 0) != seg.at(99, 0));
    CHECK(seg.at(0, 0) != seg.at(0, 99));
    CHECK(seg.at(0, 0) == seg.at(49, 49));
    expect_valid_partition(seg);
}

TEST_CASE("slic: k=1 yields a single segment") {
    Rng rng(1);
    SlicConfig cfg;
    cfg.target_k = 1;
    const auto seg = slic_segment(testing::random_image(rng, 17, 23, 3), cfg);
    CHECK(seg.n_segments == 1);
    for (auto l : seg.labels) CHECK(l == 0);
}

TEST_CASE("slic: partitions are complete and 4-connected on random images") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const int w = 8 + static_cast<int>(rng.below(40));
        const int h = 8 + static_cast<int>(rng.below(40));
        const int channels = trial % 2 ? 3 : 1;
        SlicConfig cfg;
        cfg.target_k = 1 + static_cast<int>(rng.below(60));
        cfg.slico = trial % 3 != 0;
        const Image img = trial % 4 == 0 ? testing::random_image(rng, w, h, channels)
                                         : testing::blocky_image(rng, w, h, channels, 5);
        INFO("trial " << trial << " " << w << "x" << h << " k=" << cfg.target_k);
        expect_valid_partition(slic_segment(img, cfg));
    }
}

TEST_CASE("slic: deterministic") {
    Rng rng(5);
    const Image img = testing::blocky_image(rng, 40, 30, 3, 6);
    SlicConfig cfg;
    cfg.target_k = 25;
    const auto a = slic_segment(img, cfg);
    const auto b = slic_segment(img, cfg);
    CHECK(a.labels == b.labels);
    CHECK(a.n_segments == b.n_segments);
}

TEST_CASE("slic: SLICO colour normalisers never drop below 1") {
    Rng rng(9);
    SlicConfig cfg;
    cfg.target_k = 30;
    SlicTrace trace;
    slic_segment(testing::random_image(rng, 40, 40, 3), cfg, &trace);
    REQUIRE_FALSE(trace.cluster_compactness.empty());
    for (double m : trace.cluster_compactness) CHECK(m >= 1.0);
    slic_segment(uniform_image(40, 40, 1, 0.3f), cfg, &trace);
    for (double m : trace.cluster_compactness) CHECK(m >= 1.0);
    CHECK(trace.step == doctest::Approx(std::sqrt(1600.0 / 30.0)));
}

TEST_CASE("slic: boundaries follow a sharp vertical edge") {
    Image img = uniform_image(40, 20, 1, 0.0f);
    for (int y = 0; y < 20; ++y) {
        for (int x = 20; x < 40; ++x) img.at(x, y) = 1.0f;
    }
    SlicConfig cfg;
    cfg.target_k = 8;
    const auto seg = slic_segment(img, cfg);
    const auto stats = segment_stats(img, seg);
    // No segment mixes both sides.
    for (int s = 0; s < stats.n_segments; ++s) {
        const double m = stats.mean[static_cast<std::size_t>(s)];
        CHECK((m == 0.0 || m == 1.0));
    }
}

TEST_CASE("slic: invalid configuration") {
    SlicConfig cfg;
    cfg.target_k = 0;
    CHECK_THROWS_AS(slic_segment(uniform_image(4, 4, 1, 0.f), cfg), ArgumentError);
    cfg.target_k = 17;
    CHECK_THROWS_AS(slic_segment(uniform_image(4, 4, 1, 0.f), cfg), ArgumentError);
}

TEST_CASE("relabel: ids follow raster order of components") {
    const std::vector<std::int32_t> raw = {5, 5, 7, 7,
                                           5, 5, 7, 7,
                                           9, 9, 9, 9};
    const auto seg = relabel_connected(raw, 4, 3, 1);
    CHECK(seg.n_segments == 3);
    CHECK(seg.labels == std::vector<std::int32_t>{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2});
}

TEST_CASE("relabel: one raw label split in two components gets two ids") {
    const std::vector<std::int32_t> raw = {1, 2, 1,
                                           1, 2, 1};
    const auto seg = relabel_connected(raw, 3, 2, 1);
    CHECK(seg.n_segments == 3);
    CHECK(seg.labels == std::vector<std::int32_t>{0, 1, 2, 0, 1, 2});
}

TEST_CASE("relabel: small components merge into an earlier neighbour") {
    const std::vector<std::int32_t> raw = {0, 0, 0, 0,
                                           0, 3, 0, 0,
                                           0, 0, 0, 0};
    const auto seg = relabel_connected(raw, 4, 3, 2);
    CHECK(seg.n_segments == 1);
    for (auto l : seg.labels) CHECK(l == 0);
    const auto kept = relabel_connected(raw, 4, 3, 1);
    CHECK(kept.n_segments == 2);
    CHECK(kept.at(1, 1) == 1);
}

TEST_CASE("stats: agree with brute force") {
    Rng rng(31);
    for (int channels : {1, 3}) {
        const Image img = testing::random_image(rng, 23, 17, channels);
        SlicConfig cfg;
        cfg.target_k = 12;
        const auto seg = slic_segment(img, cfg);
        const auto st = segment_stats(img, seg);
        REQUIRE(st.n_segments == seg.n_segments);
        CHECK(st.channels == channels);
        for (int s = 0; s < seg.n_segments; ++s) {
            double sx = 0, sy = 0, n = 0;
            std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) {
                    if (seg.at(x, y) != s) continue;
                    sx += x;
                    sy += y;
                    n += 1;
                    for (int c = 0; c < channels; ++c) sum[static_cast<std::size_t>(c)] += img.at(x, y, c);
                }
            }
            const auto si = static_cast<std::size_t>(s);
            CHECK(st.count[si] == static_cast<std::int64_t>(n));
            CHECK(st.centroid_x[si] == doctest::Approx(sx / n).epsilon(1e-12));
            CHECK(st.centroid_y[si] == doctest::Approx(sy / n).epsilon(1e-12));
            for (int c = 0; c < channels; ++c) {
                CHECK(st.mean[si * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)] ==
                      doctest::Approx(sum[static_cast<std::size_t>(c)] / n).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("check_segmentation: rejects gaps and split ids") {
    Segmentation seg;
    seg.width = 3;
    seg.height = 1;
    seg.labels = {0, 2, 2};
    seg.n_segments = 3;
    CHECK_THROWS_AS(check_segmentation(seg), ArgumentError);
    seg.labels = {0, 1, 0};
    seg.n_segments = 2;
    CHECK_THROWS_AS(check_segmentation(seg), ArgumentError);
    seg.labels = {0, 1, 1};
    CHECK_NOTHROW(check_segmentation(seg));
}

TEST_CASE("SEG1: round trip, wrong magic, truncation") {
    Rng rng(4);
    std::vector<Segmentation> segs;
    SlicConfig cfg;
    cfg.target_k = 10;
    segs.push_back(slic_segment(testing::random_image(rng, 12, 9, 1), cfg));
    cfg.target_k = 300;
    segs.push_back(slic_segment(testing::random_image(rng, 40, 40, 3), cfg));
    const auto bytes = encode_segmentations(segs);
    const auto back = decode_segmentations(bytes);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].labels == segs[i].labels);
        CHECK(back[i].n_segments == segs[i].n_segments);
        CHECK(back[i].target_k == segs[i].target_k);
        CHECK(back[i].width == segs[i].width);
    }
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_segmentations(bad), FormatError);
    CHECK_THROWS_AS(decode_segmentations(std::span(bytes).first(bytes.size() - 3)), LengthError);
}

TEST_CASE("mnist: node counts with target 75 (needs RAGNET_DATA_DIR)") {
    const char* root = std::getenv("RAGNET_DATA_DIR");
    std::filesystem::path dir;
    if (root) {
        dir = std::filesystem::path(root) / "mnist";
        if (!std::filesystem::exists(dir)) dir = root;
    }
    if (!root || !std::filesystem::exists(dir / "t10k-images-idx3-ubyte")) {
        MESSAGE("MNIST not available; skipped");
        return;
    }
    const auto ds = load_named_dataset("mnist", dir, Split::Test);
    SlicConfig cfg;
    int lo = 1 << 30, hi = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto seg = slic_segment(ds.images[i], cfg);
        lo = std::min(lo, seg.n_segments);
        hi = std::max(hi, seg.n_segments);
    }
    MESSAGE("MNIST segments per image in [" << lo << ", " << hi << "]");
    CHECK(lo >= 40);
    CHECK(hi <= 90);
}
