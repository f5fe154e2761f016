#include "volseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace volseg {

namespace {

void check_same_shape(const Mask& a, const Mask& b) {
    if (a.shape != b.shape)
        throw DataError("metrics: mask shapes differ (" +
                        std::to_string(a.shape[0]) + "," + std::to_string(a.shape[1]) +
                        "," + std::to_string(a.shape[2]) + " vs " +
                        std::to_string(b.shape[0]) + "," + std::to_string(b.shape[1]) +
                        "," + std::to_string(b.shape[2]) + ")");
}

inline bool fg(const Mask& m, int64_t i) { return m.labels[static_cast<size_t>(i)] != 0; }

/// One axis contribution to the squared physical distance. The same
/// expression everywhere (including the test oracles) so the transform and
/// the all-pairs computation agree bit for bit.
inline double axis_sq(double w, int64_t d) {
    const double e = w * static_cast<double>(d);
    return e * e;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Anisotropic squared Euclidean distance to the given sites, exact: three
/// separable passes, each an exhaustive 1D minimization. Floating-point
/// addition is monotone, so the nested per-axis minima equal the all-pairs
/// minimum of ((x-term + y-term) + z-term) exactly, which is what the
/// oracle-equivalence tests assert.
std::vector<double> squared_edt(const std::vector<std::array<int64_t, 3>>& sites,
                                const std::array<int64_t, 3>& shape,
                                const std::array<double, 3>& spacing) {
    const int64_t nz = shape[0], ny = shape[1], nx = shape[2];
    const int64_t n = nz * ny * nx;
    std::vector<double> d(static_cast<size_t>(n), kInf);

    // Pass 1 (x axis): per row, distance to the sites of that row.
    std::vector<std::vector<int64_t>> row_sites(static_cast<size_t>(nz * ny));
    for (const auto& s : sites)
        row_sites[static_cast<size_t>(s[0] * ny + s[1])].push_back(s[2]);
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y) {
            const auto& xs = row_sites[static_cast<size_t>(z * ny + y)];
            if (xs.empty()) continue;
            double* row = d.data() + (z * ny + y) * nx;
            for (int64_t x = 0; x < nx; ++x) {
                double best = kInf;
                for (const int64_t sx : xs)
                    best = std::min(best, axis_sq(spacing[2], x - sx));
                row[x] = best;
            }
        }

    // Pass 2 (y axis).
    std::vector<double> col(static_cast<size_t>(ny));
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t x = 0; x < nx; ++x) {
            for (int64_t y = 0; y < ny; ++y)
                col[static_cast<size_t>(y)] = d[(z * ny + y) * nx + x];
            for (int64_t y = 0; y < ny; ++y) {
                double best = kInf;
                for (int64_t sy = 0; sy < ny; ++sy) {
                    const double base = col[static_cast<size_t>(sy)];
                    if (base == kInf) continue;
                    best = std::min(best, base + axis_sq(spacing[1], y - sy));
                }
                d[(z * ny + y) * nx + x] = best;
            }
        }

    // Pass 3 (z axis).
    std::vector<double> pillar(static_cast<size_t>(nz));
    for (int64_t y = 0; y < ny; ++y)
        for (int64_t x = 0; x < nx; ++x) {
            for (int64_t z = 0; z < nz; ++z)
                pillar[static_cast<size_t>(z)] = d[(z * ny + y) * nx + x];
            for (int64_t z = 0; z < nz; ++z) {
                double best = kInf;
                for (int64_t sz = 0; sz < nz; ++sz) {
                    const double base = pillar[static_cast<size_t>(sz)];
                    if (base == kInf) continue;
                    best = std::min(best, base + axis_sq(spacing[0], z - sz));
                }
                d[(z * ny + y) * nx + x] = best;
            }
        }
    return d;
}

int64_t count_within(const SurfaceSet& from, const std::vector<double>& dist2_to,
                     const std::array<int64_t, 3>& shape, double tau2) {
    int64_t hits = 0;
    for (const auto& v : from.voxels) {
        const double d2 = dist2_to[static_cast<size_t>(
            (v[0] * shape[1] + v[1]) * shape[2] + v[2])];
        if (d2 <= tau2) ++hits;
    }
    return hits;
}

}  // namespace

double dsc(const Mask& a, const Mask& b) {
    check_same_shape(a, b);
    int64_t na = 0, nb = 0, inter = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool fa = fg(a, i), fb = fg(b, i);
        na += fa;
        nb += fb;
        inter += fa && fb;
    }
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

SurfaceSet extract_surface(const Mask& m, const std::array<double, 3>& spacing) {
    SurfaceSet s;
    s.spacing = spacing;
    const int64_t nz = m.shape[0], ny = m.shape[1], nx = m.shape[2];
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y)
            for (int64_t x = 0; x < nx; ++x) {
                if (m.at(z, y, x) == 0) continue;
                const bool exposed =
                    z == 0 || m.at(z - 1, y, x) == 0 || z == nz - 1 ||
                    m.at(z + 1, y, x) == 0 || y == 0 || m.at(z, y - 1, x) == 0 ||
                    y == ny - 1 || m.at(z, y + 1, x) == 0 || x == 0 ||
                    m.at(z, y, x - 1) == 0 || x == nx - 1 || m.at(z, y, x + 1) == 0;
                if (exposed) s.voxels.push_back({z, y, x});
            }
    return s;
}

double nsd(const Mask& a, const Mask& b, const std::array<double, 3>& spacing,
           double tau_mm) {
    check_same_shape(a, b);
    if (tau_mm < 0.0) throw ConfigError("nsd: tolerance must be non-negative");
    bool a_empty = true, b_empty = true;
    for (int64_t i = 0; i < a.numel() && (a_empty || b_empty); ++i) {
        a_empty = a_empty && !fg(a, i);
        b_empty = b_empty && !fg(b, i);
    }
    if (a_empty && b_empty) return 1.0;
    if (a_empty || b_empty) return 0.0;

    const SurfaceSet sa = extract_surface(a, spacing);
    const SurfaceSet sb = extract_surface(b, spacing);
    const double tau2 = tau_mm * tau_mm;
    const std::vector<double> to_b = squared_edt(sb.voxels, a.shape, spacing);
    const std::vector<double> to_a = squared_edt(sa.voxels, a.shape, spacing);
    const int64_t hits = count_within(sa, to_b, a.shape, tau2) +
                         count_within(sb, to_a, a.shape, tau2);
    return static_cast<double>(hits) /
           static_cast<double>(sa.voxels.size() + sb.voxels.size());
}

ConfusionStats confusion_stats(const Mask& a, const Mask& b) {
    check_same_shape(a, b);
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool fa = fg(a, i), fb = fg(b, i);
        tp += fa && fb;
        fp += !fa && fb;
        fn += fa && !fb;
        tn += !fa && !fb;
    }
    ConfusionStats s;
    if (tp + fn > 0)
        s.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tp + fp > 0)
        s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (s.sensitivity && s.precision && (*s.sensitivity + *s.precision > 0.0))
        s.f1 = 2.0 * *s.precision * *s.sensitivity / (*s.precision + *s.sensitivity);
    const int64_t total = tp + fp + fn + tn;
    if (total > 0)
        s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
    return s;
}

CaseMetrics evaluate_case(const std::string& case_id, const Mask& annotation,
                          const Mask& prediction,
                          const std::array<double, 3>& spacing, double tau_mm) {
    CaseMetrics m;
    m.case_id = case_id;
    m.dsc = dsc(annotation, prediction);
    m.nsd = nsd(annotation, prediction, spacing, tau_mm);
    const ConfusionStats c = confusion_stats(annotation, prediction);
    m.sensitivity = c.sensitivity;
    m.precision = c.precision;
    m.f1 = c.f1;
    m.accuracy = c.accuracy;
    return m;
}

namespace {

MetricSummary summarize(const std::vector<CaseMetrics>& per_case,
                        std::optional<double> CaseMetrics::*field,
                        const char* metric_name) {
    MetricSummary s;
    double sum = 0.0;
    for (const auto& c : per_case) {
        const auto& v = c.*field;
        if (!v) {
            ++s.excluded;
            continue;
        }
        sum += *v;
        ++s.count;
    }
    if (s.count == 0)
        throw DataError(std::string("aggregate: metric '") + metric_name +
                        "' is undefined for every case");
    s.mean = sum / static_cast<double>(s.count);
    double sq = 0.0;
    for (const auto& c : per_case) {
        const auto& v = c.*field;
        if (!v) continue;
        const double d = *v - s.mean;
        sq += d * d;
    }
    s.std = std::sqrt(sq / static_cast<double>(s.count));  // population convention
    return s;
}

void put(std::string& line, const std::optional<double>& v) {
    if (v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", *v);
        line += buf;
    } else {
        line += "NA";
    }
}

}  // namespace

FoldSummary aggregate(const std::vector<CaseMetrics>& per_case) {
    if (per_case.empty()) throw DataError("aggregate: no cases");
    FoldSummary f;
    f.dsc = summarize(per_case, &CaseMetrics::dsc, "dsc");
    f.nsd = summarize(per_case, &CaseMetrics::nsd, "nsd");
    f.sensitivity = summarize(per_case, &CaseMetrics::sensitivity, "sensitivity");
    f.precision = summarize(per_case, &CaseMetrics::precision, "precision");
    f.f1 = summarize(per_case, &CaseMetrics::f1, "f1");
    f.accuracy = summarize(per_case, &CaseMetrics::accuracy, "accuracy");
    return f;
}

void save_case_metrics_csv(const std::string& path,
                           const std::vector<CaseMetrics>& per_case) {
    std::ofstream out(path);
    if (!out) throw DataError("metrics: cannot write " + path);
    out << "case_id,dsc,nsd,sensitivity,precision,f1,accuracy\n";
    for (const auto& c : per_case) {
        std::string line = c.case_id;
        for (const auto* v : {&c.dsc, &c.nsd, &c.sensitivity, &c.precision, &c.f1,
                              &c.accuracy}) {
            line += ",";
            put(line, *v);
        }
        out << line << "\n";
    }
    if (!out) throw DataError("metrics: write failed for " + path);
}

void save_fold_summary_csv(const std::string& path, const FoldSummary& summary) {
    std::ofstream out(path);
    if (!out) throw DataError("metrics: cannot write " + path);
    out << "stat,dsc,nsd,sensitivity,precision,f1,accuracy\n";
    char buf[256];
    const auto row = [&](const char* stat, double MetricSummary::*field) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", stat,
                      summary.dsc.*field, summary.nsd.*field,
                      summary.sensitivity.*field, summary.precision.*field,
                      summary.f1.*field, summary.accuracy.*field);
        out << buf;
    };
    row("mean", &MetricSummary::mean);
    row("std", &MetricSummary::std);
    std::snprintf(buf, sizeof(buf), "excluded,%lld,%lld,%lld,%lld,%lld,%lld\n",
                  static_cast<long long>(summary.dsc.excluded),
                  static_cast<long long>(summary.nsd.excluded),
                  static_cast<long long>(summary.sensitivity.excluded),
                  static_cast<long long>(summary.precision.excluded),
                  static_cast<long long>(summary.f1.excluded),
                  static_cast<long long>(summary.accuracy.excluded));
    out << buf;
    if (!out) throw DataError("metrics: write failed for " + path);
}

}  // namespace volseg
