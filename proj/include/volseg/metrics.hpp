#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg {

/// Boundary voxels of a binary mask: foreground voxels with at least one
/// of their six face neighbors outside the foreground (the volume border
/// counts as outside). Coordinates are (z,y,x), scan order.
struct SurfaceSet {
    std::vector<std::array<int64_t, 3>> voxels;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

/// Volumetric overlap 2|A∩B| / (|A|+|B|) over foreground voxels; 1.0 when
/// both masks are empty, 0.0 when exactly one is.
double dsc(const Mask& a, const Mask& b);

SurfaceSet extract_surface(const Mask& m, const std::array<double, 3>& spacing);

/// Fraction of boundary voxels of each mask lying within physical distance
/// tau_mm (anisotropic voxel-center Euclidean) of the other mask's
/// boundary. 1.0 when both masks are empty, 0.0 when exactly one is.
double nsd(const Mask& a, const Mask& b, const std::array<double, 3>& spacing,
           double tau_mm);

/// Overlap counts of annotation a vs prediction b.
struct ConfusionStats {
    std::optional<double> sensitivity;  // TP/(TP+FN)
    std::optional<double> precision;    // TP/(TP+FP)
    std::optional<double> f1;           // 2PS/(P+S)
    std::optional<double> accuracy;     // (TP+TN)/total
};

ConfusionStats confusion_stats(const Mask& a, const Mask& b);

struct CaseMetrics {
    std::string case_id;
    std::optional<double> dsc;
    std::optional<double> nsd;
    std::optional<double> sensitivity;
    std::optional<double> precision;
    std::optional<double> f1;
    std::optional<double> accuracy;
};

/// Evaluates all six metrics of one (annotation, prediction) pair.
CaseMetrics evaluate_case(const std::string& case_id, const Mask& annotation,
                          const Mask& prediction,
                          const std::array<double, 3>& spacing, double tau_mm);

/// Mean and population standard deviation of the defined values of one
/// metric, plus how many cases were excluded as undefined.
struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;
    int64_t count = 0;
    int64_t excluded = 0;
};

struct FoldSummary {
    MetricSummary dsc;
    MetricSummary nsd;
    MetricSummary sensitivity;
    MetricSummary precision;
    MetricSummary f1;
    MetricSummary accuracy;
};

/// Per-metric mean ± std across cases. Throws DataError on an empty list
/// or when every case leaves some metric undefined.
FoldSummary aggregate(const std::vector<CaseMetrics>& per_case);

/// CSV with one row per case: case_id + the six metrics, "NA" when
/// undefined. Column order: dsc,nsd,sensitivity,precision,f1,accuracy.
void save_case_metrics_csv(const std::string& path,
                           const std::vector<CaseMetrics>& per_case);

/// Two-row CSV (mean line and std line) plus excluded counts.
void save_fold_summary_csv(const std::string& path, const FoldSummary& summary);

}  // namespace volseg
