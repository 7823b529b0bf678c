#include "cto/metrics.hpp"

#include <cmath>

#include "cto/error.hpp"

namespace cto {

namespace {

void check_dims(const LabelMask& a, const LabelMask& b) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError("metrics: mask size mismatch " + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                         std::to_string(b.w));
}

struct Overlap {
    std::int64_t inter = 0, a = 0, b = 0;
};

Overlap overlap_for_label(const LabelMask& pred, const LabelMask& gt, int label) {
    Overlap o;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool pa = pred.v[i] == label;
        const bool pb = gt.v[i] == label;
        o.a += pa;
        o.b += pb;
        o.inter += pa && pb;
    }
    return o;
}

double dice_from(const Overlap& o) {
    if (o.a + o.b == 0) return 1.0;
    return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.a + o.b);
}

double iou_from(const Overlap& o) {
    const std::int64_t uni = o.a + o.b - o.inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(o.inter) / static_cast<double>(uni);
}

Overlap overlap_binary(const LabelMask& pred, const LabelMask& gt) {
    Overlap o;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool pa = pred.v[i] != 0;
        const bool pb = gt.v[i] != 0;
        o.a += pa;
        o.b += pb;
        o.inter += pa && pb;
    }
    return o;
}

// 1-D lower envelope pass of the exact squared EDT.
void edt_pass(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
              std::vector<double>& z, int n) {
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = ((f[static_cast<size_t>(q)] + q * q) -
                    (f[static_cast<size_t>(v[static_cast<size_t>(k)])] +
                     v[static_cast<size_t>(k)] * v[static_cast<size_t>(k)])) /
                   (2.0 * q - 2.0 * v[static_cast<size_t>(k)]);
        while (s <= z[static_cast<size_t>(k)]) {
            --k;
            s = ((f[static_cast<size_t>(q)] + q * q) -
                 (f[static_cast<size_t>(v[static_cast<size_t>(k)])] +
                  v[static_cast<size_t>(k)] * v[static_cast<size_t>(k)])) /
                (2.0 * q - 2.0 * v[static_cast<size_t>(k)]);
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(k) + 1] < q) ++k;
        const double dq = q - v[static_cast<size_t>(k)];
        d[static_cast<size_t>(q)] = dq * dq + f[static_cast<size_t>(v[static_cast<size_t>(k)])];
    }
}

} // namespace

std::vector<double> squared_edt(const LabelMask& features) {
    const int h = features.h, w = features.w;
    const double kInf = 1e18;
    std::vector<double> dist(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < dist.size(); ++i) dist[i] = features.v[i] ? 0.0 : kInf;

    const int n = std::max(h, w);
    std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n)),
        z(static_cast<size_t>(n) + 1);
    std::vector<int> v(static_cast<size_t>(n));
    // columns
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) f[static_cast<size_t>(r)] = dist[static_cast<size_t>(r) * w + c];
        edt_pass(f, d, v, z, h);
        for (int r = 0; r < h; ++r) dist[static_cast<size_t>(r) * w + c] = d[static_cast<size_t>(r)];
    }
    // rows
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) f[static_cast<size_t>(c)] = dist[static_cast<size_t>(r) * w + c];
        edt_pass(f, d, v, z, w);
        for (int c = 0; c < w; ++c) dist[static_cast<size_t>(r) * w + c] = d[static_cast<size_t>(c)];
    }
    return dist;
}

double dice_metric(const LabelMask& pred, const LabelMask& gt) {
    check_dims(pred, gt);
    return dice_from(overlap_binary(pred, gt));
}

double iou_metric(const LabelMask& pred, const LabelMask& gt) {
    check_dims(pred, gt);
    return iou_from(overlap_binary(pred, gt));
}

double dice_metric_multiclass(const LabelMask& pred, const LabelMask& gt, int num_classes) {
    check_dims(pred, gt);
    double acc = 0;
    for (int k = 0; k < num_classes; ++k) acc += dice_from(overlap_for_label(pred, gt, k));
    return acc / num_classes;
}

double iou_metric_multiclass(const LabelMask& pred, const LabelMask& gt, int num_classes) {
    check_dims(pred, gt);
    double acc = 0;
    for (int k = 0; k < num_classes; ++k) acc += iou_from(overlap_for_label(pred, gt, k));
    return acc / num_classes;
}

double avg_hausdorff(const LabelMask& pred, const LabelMask& gt) {
    check_dims(pred, gt);
    const LabelMask ba = inner_boundary(pred);
    const LabelMask bb = inner_boundary(gt);
    std::int64_t na = 0, nb = 0;
    for (auto x : ba.v) na += x;
    for (auto x : bb.v) nb += x;
    if (na == 0 || nb == 0) return std::numeric_limits<double>::infinity();

    const std::vector<double> to_b = squared_edt(bb);
    const std::vector<double> to_a = squared_edt(ba);
    double sum_ab = 0, sum_ba = 0;
    for (size_t i = 0; i < ba.v.size(); ++i) {
        if (ba.v[i]) sum_ab += std::sqrt(to_b[i]);
        if (bb.v[i]) sum_ba += std::sqrt(to_a[i]);
    }
    return 0.5 * (sum_ab / static_cast<double>(na) + sum_ba / static_cast<double>(nb));
}

} // namespace cto
