#include "ragnet/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"

namespace ragnet {

void SlicConfig::validate() const {
    if (target_k < 1) throw ArgumentError("slic: target_k must be >= 1, got " + std::to_string(target_k));
    if (max_iters < 1) throw ArgumentError("slic: max_iters must be >= 1, got " + std::to_string(max_iters));
    if (!(min_segment_ratio > 0.0 && min_segment_ratio < 1.0)) {
        throw ArgumentError("slic: min_segment_ratio must be in (0,1), got " + std::to_string(min_segment_ratio));
    }
    if (!(initial_compactness > 0.0)) throw ArgumentError("slic: initial_compactness must be positive");
}

std::array<double, 3> srgb_to_lab(double r, double g, double b) {
    auto linear = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
    const double rl = linear(r);
    const double gl = linear(g);
    const double bl = linear(b);
    // D65 reference white.
    const double x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / 0.95047;
    const double y = (0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl);
    const double z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / 1.08883;
    constexpr double eps = 216.0 / 24389.0;
    constexpr double kappa = 24389.0 / 27.0;
    auto f = [&](double t) { return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0; };
    const double fx = f(x);
    const double fy = f(y);
    const double fz = f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::vector<std::array<double, 3>> image_to_lab(const Image& img) {
    std::vector<std::array<double, 3>> lab(img.pixel_count());
    for (std::size_t p = 0; p < lab.size(); ++p) {
        if (img.channels == 1) {
            lab[p] = {100.0 * img.data[p], 0.0, 0.0};
        } else {
            lab[p] = srgb_to_lab(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
        }
    }
    return lab;
}

namespace {

struct Center {
    double l, a, b, x, y;
};

double lab_dist2(const std::array<double, 3>& p, const Center& c) {
    const double dl = p[0] - c.l;
    const double da = p[1] - c.a;
    const double db = p[2] - c.b;
    return dl * dl + da * da + db * db;
}

std::vector<Center> seed_centers(const std::vector<std::array<double, 3>>& lab, int width, int height, double step) {
    const int xstrips = std::max(1, static_cast<int>(std::lround(width / step)));
    const int ystrips = std::max(1, static_cast<int>(std::lround(height / step)));
    const double xstep = static_cast<double>(width) / xstrips;
    const double ystep = static_cast<double>(height) / ystrips;

    auto idx = [width](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
    auto gradient = [&](int x, int y) {
        const int xl = std::max(x - 1, 0), xr = std::min(x + 1, width - 1);
        const int yu = std::max(y - 1, 0), yd = std::min(y + 1, height - 1);
        double g = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double dx = lab[idx(xr, y)][c] - lab[idx(xl, y)][c];
            const double dy = lab[idx(x, yd)][c] - lab[idx(x, yu)][c];
            g += dx * dx + dy * dy;
        }
        return g;
    };

    std::vector<Center> centers;
    centers.reserve(static_cast<std::size_t>(xstrips) * ystrips);
    for (int j = 0; j < ystrips; ++j) {
        for (int i = 0; i < xstrips; ++i) {
            // Strip centre in pixel-index coordinates; stays fractional unless
            // a strictly lower-gradient pixel exists in the 3x3 neighbourhood.
            const double cx = (i + 0.5) * xstep - 0.5;
            const double cy = (j + 0.5) * ystep - 0.5;
            const int sx = std::clamp(static_cast<int>(std::lround(cx)), 0, width - 1);
            const int sy = std::clamp(static_cast<int>(std::lround(cy)), 0, height - 1);
            double best = gradient(sx, sy);
            int bx = sx, by = sy;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = sx + dx, ny = sy + dy;
                    if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
                    const double g = gradient(nx, ny);
                    if (g < best) {
                        best = g;
                        bx = nx;
                        by = ny;
                    }
                }
            }
            const auto& p = lab[idx(bx, by)];
            if (bx == sx && by == sy) {
                centers.push_back({p[0], p[1], p[2], cx, cy});
            } else {
                centers.push_back({p[0], p[1], p[2], static_cast<double>(bx), static_cast<double>(by)});
            }
        }
    }
    return centers;
}

}  // namespace

Segmentation slic_segment(const Image& img, const SlicConfig& cfg, SlicTrace* trace) {
    validate(img);
    cfg.validate();
    const int width = img.width;
    const int height = img.height;
    const std::size_t n_pixels = img.pixel_count();
    if (static_cast<std::size_t>(cfg.target_k) > n_pixels) {
        throw ArgumentError("slic: target_k " + std::to_string(cfg.target_k) + " exceeds pixel count " +
                            std::to_string(n_pixels));
    }

    const auto lab = image_to_lab(img);
    const double step = std::sqrt(static_cast<double>(n_pixels) / cfg.target_k);
    std::vector<Center> centers = seed_centers(lab, width, height, step);
    const std::size_t k = centers.size();

    const double inv_step2 = 1.0 / (step * step);
    std::vector<double> compactness(k, cfg.initial_compactness);
    std::vector<std::int32_t> assign(n_pixels, -1);
    std::vector<double> best(n_pixels);
    std::vector<double> color_d2(n_pixels);

    auto distance = [&](std::size_t c, double dlab2, double dxy2) {
        const double m = compactness[c];
        // SLICO normalises colour by the cluster's own range; plain SLIC
        // scales the spatial term by a fixed compactness instead.
        return cfg.slico ? dlab2 / (m * m) + dxy2 * inv_step2 : dlab2 + dxy2 * inv_step2 * m * m;
    };

    std::vector<double> sums(k * 5);
    std::vector<std::int64_t> counts(k);
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        std::fill(assign.begin(), assign.end(), -1);
        for (std::size_t c = 0; c < k; ++c) {
            const Center& ctr = centers[c];
            const int x1 = std::max(0, static_cast<int>(std::floor(ctr.x - step)));
            const int x2 = std::min(width - 1, static_cast<int>(std::ceil(ctr.x + step)));
            const int y1 = std::max(0, static_cast<int>(std::floor(ctr.y - step)));
            const int y2 = std::min(height - 1, static_cast<int>(std::ceil(ctr.y + step)));
            for (int y = y1; y <= y2; ++y) {
                for (int x = x1; x <= x2; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * width + x;
                    const double dlab2 = lab_dist2(lab[p], ctr);
                    const double dx = x - ctr.x, dy = y - ctr.y;
                    const double d = distance(c, dlab2, dx * dx + dy * dy);
                    // Strict comparison: on ties the lower center id wins.
                    if (d < best[p]) {
                        best[p] = d;
                        assign[p] = static_cast<std::int32_t>(c);
                        color_d2[p] = dlab2;
                    }
                }
            }
        }
        // Pixels outside every window (only possible on strongly non-square
        // images) fall back to a full search.
        for (std::size_t p = 0; p < n_pixels; ++p) {
            if (assign[p] >= 0) continue;
            const int x = static_cast<int>(p % width), y = static_cast<int>(p / width);
            for (std::size_t c = 0; c < k; ++c) {
                const double dlab2 = lab_dist2(lab[p], centers[c]);
                const double dx = x - centers[c].x, dy = y - centers[c].y;
                const double d = distance(c, dlab2, dx * dx + dy * dy);
                if (d < best[p]) {
                    best[p] = d;
                    assign[p] = static_cast<std::int32_t>(c);
                    color_d2[p] = dlab2;
                }
            }
        }

        if (cfg.slico) {
            std::vector<double> max_d2(k, 0.0);
            for (std::size_t p = 0; p < n_pixels; ++p) {
                auto& m = max_d2[static_cast<std::size_t>(assign[p])];
                m = std::max(m, color_d2[p]);
            }
            for (std::size_t c = 0; c < k; ++c) compactness[c] = std::max(1.0, std::sqrt(max_d2[c]));
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t p = 0; p < n_pixels; ++p) {
            const auto c = static_cast<std::size_t>(assign[p]);
            double* s = &sums[c * 5];
            s[0] += lab[p][0];
            s[1] += lab[p][1];
            s[2] += lab[p][2];
            s[3] += static_cast<double>(p % width);
            s[4] += static_cast<double>(p / width);
            ++counts[c];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[c]);
            centers[c] = {sums[c * 5] * inv, sums[c * 5 + 1] * inv, sums[c * 5 + 2] * inv, sums[c * 5 + 3] * inv,
                          sums[c * 5 + 4] * inv};
        }
    }

    const double threshold = cfg.min_segment_ratio * static_cast<double>(n_pixels) / cfg.target_k;
    const int min_size = static_cast<int>(std::ceil(threshold));
    Segmentation seg = relabel_connected(assign, width, height, min_size);
    seg.target_k = cfg.target_k;

    if (trace) {
        trace->n_seeds = static_cast<int>(k);
        trace->step = step;
        trace->cluster_compactness = compactness;
    }
    return seg;
}

Segmentation relabel_connected(std::span<const std::int32_t> raw_labels, int width, int height, int min_size) {
    if (width <= 0 || height <= 0 || raw_labels.size() != static_cast<std::size_t>(width) * height) {
        throw ArgumentError("relabel_connected: label map size does not match " + std::to_string(width) + "x" +
                            std::to_string(height));
    }
    const std::size_t n = raw_labels.size();
    Segmentation seg;
    seg.width = width;
    seg.height = height;
    seg.labels.assign(n, -1);

    constexpr int dx4[4] = {-1, 0, 1, 0};
    constexpr int dy4[4] = {0, -1, 0, 1};
    std::vector<std::size_t> component;
    component.reserve(n);
    std::int32_t next_id = 0;
    for (std::size_t start = 0; start < n; ++start) {
        if (seg.labels[start] >= 0) continue;
        const int sx = static_cast<int>(start % width), sy = static_cast<int>(start / width);
        std::int32_t adjacent = -1;
        for (int d = 0; d < 4 && adjacent < 0; ++d) {
            const int nx = sx + dx4[d], ny = sy + dy4[d];
            if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
            const auto q = static_cast<std::size_t>(ny) * width + nx;
            if (seg.labels[q] >= 0) adjacent = seg.labels[q];
        }

        const std::int32_t raw = raw_labels[start];
        component.clear();
        component.push_back(start);
        seg.labels[start] = next_id;
        for (std::size_t head = 0; head < component.size(); ++head) {
            const std::size_t p = component[head];
            const int x = static_cast<int>(p % width), y = static_cast<int>(p / width);
            for (int d = 0; d < 4; ++d) {
                const int nx = x + dx4[d], ny = y + dy4[d];
                if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
                const auto q = static_cast<std::size_t>(ny) * width + nx;
                if (seg.labels[q] < 0 && raw_labels[q] == raw) {
                    seg.labels[q] = next_id;
                    component.push_back(q);
                }
            }
        }
        if (static_cast<int>(component.size()) < min_size && adjacent >= 0) {
            for (auto p : component) seg.labels[p] = adjacent;
        } else {
            ++next_id;
        }
    }
    seg.n_segments = next_id;
    return seg;
}

SegmentStats segment_stats(const Image& img, const Segmentation& seg) {
    if (img.width != seg.width || img.height != seg.height || seg.labels.size() != img.pixel_count()) {
        throw ArgumentError("segment_stats: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            " but segmentation is " + std::to_string(seg.width) + "x" + std::to_string(seg.height));
    }
    SegmentStats st;
    st.n_segments = seg.n_segments;
    st.channels = img.channels;
    const auto n = static_cast<std::size_t>(seg.n_segments);
    const auto ch = static_cast<std::size_t>(img.channels);
    st.mean.assign(n * ch, 0.0);
    st.centroid_x.assign(n, 0.0);
    st.centroid_y.assign(n, 0.0);
    st.count.assign(n, 0);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
            const auto s = seg.labels[p];
            if (s < 0 || s >= seg.n_segments) throw ArgumentError("segment_stats: label out of range at pixel " + std::to_string(p));
            const auto si = static_cast<std::size_t>(s);
            for (std::size_t c = 0; c < ch; ++c) st.mean[si * ch + c] += img.data[p * ch + c];
            st.centroid_x[si] += x;
            st.centroid_y[si] += y;
            ++st.count[si];
        }
    }
    for (std::size_t s = 0; s < n; ++s) {
        if (st.count[s] == 0) throw ArgumentError("segment_stats: segment " + std::to_string(s) + " is empty");
        const double cnt = static_cast<double>(st.count[s]);
        for (std::size_t c = 0; c < ch; ++c) st.mean[s * ch + c] /= cnt;
        st.centroid_x[s] /= cnt;
        st.centroid_y[s] /= cnt;
    }
    return st;
}

void check_segmentation(const Segmentation& seg) {
    const std::size_t n = static_cast<std::size_t>(seg.width) * seg.height;
    if (seg.labels.size() != n || n == 0) throw ArgumentError("segmentation: label map size mismatch");
    if (seg.n_segments < 1) throw ArgumentError("segmentation: n_segments < 1");
    std::vector<std::int64_t> size(static_cast<std::size_t>(seg.n_segments), 0);
    for (auto l : seg.labels) {
        if (l < 0 || l >= seg.n_segments) throw ArgumentError("segmentation: label " + std::to_string(l) + " out of range");
        ++size[static_cast<std::size_t>(l)];
    }
    for (std::size_t s = 0; s < size.size(); ++s) {
        if (size[s] == 0) throw ArgumentError("segmentation: id " + std::to_string(s) + " unused (ids not contiguous)");
    }
    // Each id must be reachable from its first pixel.
    std::vector<char> seen(n, 0);
    std::vector<char> started(size.size(), 0);
    std::vector<std::size_t> queue;
    for (std::size_t start = 0; start < n; ++start) {
        const auto l = static_cast<std::size_t>(seg.labels[start]);
        if (started[l]) {
            if (!seen[start]) throw ArgumentError("segmentation: segment " + std::to_string(l) + " is not 4-connected");
            continue;
        }
        started[l] = 1;
        queue.assign(1, start);
        seen[start] = 1;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::size_t p = queue[head];
            const int x = static_cast<int>(p % seg.width), y = static_cast<int>(p / seg.width);
            const std::size_t nb[4] = {x > 0 ? p - 1 : n, x + 1 < seg.width ? p + 1 : n,
                                       y > 0 ? p - seg.width : n, y + 1 < seg.height ? p + seg.width : n};
            for (auto q : nb) {
                if (q < n && !seen[q] && seg.labels[q] == seg.labels[p]) {
                    seen[q] = 1;
                    queue.push_back(q);
                }
            }
        }
    }
}

std::vector<std::uint8_t> encode_segmentations(std::span<const Segmentation> segs) {
    ByteWriter w;
    w.put_magic("SEG1");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(segs.size()));
    for (const auto& s : segs) {
        if (s.n_segments > 65535) throw ArgumentError("SEG1: more than 65535 segments in one image");
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.width));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.height));
        w.put<std::int32_t>(s.target_k);
        w.put<std::int32_t>(s.n_segments);
        const bool wide = s.n_segments > 256;
        w.put<std::uint8_t>(wide ? 2 : 1);
        for (auto l : s.labels) {
            if (wide) {
                w.put<std::uint16_t>(static_cast<std::uint16_t>(l));
            } else {
                w.put<std::uint8_t>(static_cast<std::uint8_t>(l));
            }
        }
    }
    return w.take();
}

std::vector<Segmentation> decode_segmentations(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "SEG1");
    r.expect_magic("SEG1");
    const auto count = r.get<std::uint32_t>();
    std::vector<Segmentation> out;
    out.reserve(std::min<std::size_t>(count, bytes.size() / 17));
    for (std::uint32_t i = 0; i < count; ++i) {
        Segmentation s;
        s.width = static_cast<int>(r.get<std::uint32_t>());
        s.height = static_cast<int>(r.get<std::uint32_t>());
        s.target_k = r.get<std::int32_t>();
        s.n_segments = r.get<std::int32_t>();
        const auto width_bytes = r.get<std::uint8_t>();
        if (width_bytes != 1 && width_bytes != 2) r.fail("label width must be 1 or 2");
        const std::size_t n = static_cast<std::size_t>(s.width) * static_cast<std::size_t>(s.height);
        r.need(n * width_bytes);
        s.labels.resize(n);
        for (std::size_t p = 0; p < n; ++p) {
            s.labels[p] = width_bytes == 2 ? r.get<std::uint16_t>() : r.get<std::uint8_t>();
            if (s.labels[p] >= s.n_segments) r.fail("label exceeds n_segments");
        }
        out.push_back(std::move(s));
    }
    if (!r.done()) r.fail("trailing bytes");
    return out;
}

}  // namespace ragnet
