// Python bindings for the toolkit's main operations: synthetic case
// generation and container I/O, the evaluation metrics, the
// cross-validation split protocol, the decay schedule, single-task
// pre-training, checkpoint inspection, sliding-window inference, and
// montage rendering. Arrays cross the boundary as NumPy ndarrays in
// (z, y, x) order.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "volseg/checkpoint.hpp"
#include "volseg/harness.hpp"
#include "volseg/inference.hpp"
#include "volseg/metrics.hpp"
#include "volseg/optimizer.hpp"
#include "volseg/render.hpp"
#include "volseg/sampling.hpp"
#include "volseg/synthetic.hpp"
#include "volseg/transfer.hpp"

namespace py = pybind11;

namespace {

using volseg::Checkpoint;
using volseg::Mask;
using volseg::ModelKind;
using volseg::Tensor;
using volseg::Volume;

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

std::array<int64_t, 3> shape_of(const py::buffer_info& info, const char* what) {
    if (info.ndim != 3)
        throw volseg::DataError(std::string(what) + ": expected a 3-D (z, y, x) array");
    return {info.shape[0], info.shape[1], info.shape[2]};
}

Volume to_volume(const FloatArray& arr, const std::array<double, 3>& spacing,
                 const std::string& case_id) {
    const py::buffer_info info = arr.request();
    Volume v;
    v.shape = shape_of(info, "volume");
    v.spacing = spacing;
    v.case_id = case_id;
    const auto* src = static_cast<const float*>(info.ptr);
    v.data.assign(src, src + info.size);
    return v;
}

Mask to_mask(const LabelArray& arr) {
    const py::buffer_info info = arr.request();
    Mask m;
    m.shape = shape_of(info, "mask");
    const auto* src = static_cast<const uint8_t*>(info.ptr);
    m.labels.assign(src, src + info.size);
    uint8_t top = 0;
    for (auto l : m.labels) top = std::max(top, l);
    m.num_classes = std::max<int64_t>(2, static_cast<int64_t>(top) + 1);
    return m;
}

FloatArray from_volume(const Volume& v) {
    FloatArray arr({v.shape[0], v.shape[1], v.shape[2]});
    std::memcpy(arr.mutable_data(), v.data.data(), v.data.size() * sizeof(float));
    return arr;
}

LabelArray from_mask(const Mask& m) {
    LabelArray arr({m.shape[0], m.shape[1], m.shape[2]});
    std::memcpy(arr.mutable_data(), m.labels.data(), m.labels.size());
    return arr;
}

py::object opt_float(const std::optional<double>& v) {
    if (v) return py::float_(*v);
    return py::none();
}

/// Loads the checkpoint, preprocesses the raw volume with the statistics
/// stored in it, and runs tiled inference; the model family is recognized
/// from the parameter names.
Tensor probs_for(const std::string& checkpoint_path, const FloatArray& volume,
                 const std::array<double, 3>& spacing,
                 const std::array<int64_t, 3>& patch_size) {
    const Checkpoint ckpt = volseg::load_checkpoint(checkpoint_path);
    const Volume raw = to_volume(volume, spacing, "query");
    const Volume prepared = volseg::preprocess(raw, ckpt.stats);
    const ModelKind kind = ckpt.params.has("fusion/select_a") ? ModelKind::kHybrid
                                                              : ModelKind::kPlain;
    py::gil_scoped_release release;
    return volseg::predict_probs(ckpt.params, ckpt.spec, kind, prepared,
                                 patch_size);
}

}  // namespace

PYBIND11_MODULE(_volseg, m) {
    m.doc() = "Transfer-learning toolkit for 3-D volumetric lesion segmentation";

    py::register_exception<volseg::ConfigError>(m, "ConfigError",
                                                PyExc_ValueError);
    py::register_exception<volseg::DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<volseg::TrainDivergedError>(m, "TrainDivergedError",
                                                       PyExc_RuntimeError);

    m.def(
        "generate_case",
        [](const std::string& family, uint64_t seed,
           const std::array<int64_t, 3>& shape, double min_radius,
           double max_radius) {
            volseg::FamilySpec fam = volseg::make_family(family);
            fam.shape = shape;
            fam.min_radius = min_radius;
            fam.max_radius = max_radius;
            volseg::Rng rng(seed);
            auto [v, mask] = volseg::gen_synthetic_case(
                rng, fam, family + "_" + std::to_string(seed));
            return py::make_tuple(from_volume(v), from_mask(mask));
        },
        py::arg("family"), py::arg("seed"),
        py::arg("shape") = std::array<int64_t, 3>{16, 24, 24},
        py::arg("min_radius") = 2.5, py::arg("max_radius") = 4.5,
        "Deterministic synthetic case of the named lesion family "
        "('blob', 'shell', 'plate'); returns (volume, mask) arrays.");

    m.def(
        "save_case",
        [](const std::string& path, const FloatArray& volume,
           const LabelArray& mask, const std::array<double, 3>& spacing,
           const std::string& case_id) {
            volseg::save_case(path, to_volume(volume, spacing, case_id),
                              to_mask(mask));
        },
        py::arg("path"), py::arg("volume"), py::arg("mask"),
        py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
        py::arg("case_id") = "case",
        "Writes a (volume, mask) pair into one case container file.");

    m.def(
        "load_case",
        [](const std::string& path) {
            auto [v, mask] = volseg::load_case(path);
            return py::make_tuple(from_volume(v), from_mask(mask), v.spacing,
                                  v.case_id);
        },
        py::arg("path"),
        "Reads a case container; returns (volume, mask, spacing, case_id).");

    m.def(
        "dsc",
        [](const LabelArray& annotation, const LabelArray& prediction) {
            return volseg::dsc(to_mask(annotation), to_mask(prediction));
        },
        py::arg("annotation"), py::arg("prediction"),
        "Volumetric overlap 2|A∩B|/(|A|+|B|) of the foregrounds.");

    m.def(
        "nsd",
        [](const LabelArray& annotation, const LabelArray& prediction,
           const std::array<double, 3>& spacing, double tau_mm) {
            return volseg::nsd(to_mask(annotation), to_mask(prediction), spacing,
                               tau_mm);
        },
        py::arg("annotation"), py::arg("prediction"),
        py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
        py::arg("tau_mm") = 3.0,
        "Fraction of boundary voxels within the physical tolerance of the "
        "other mask's boundary.");

    m.def(
        "surface_to_volume",
        [](const LabelArray& mask) {
            return volseg::surface_to_volume(to_mask(mask));
        },
        py::arg("mask"), "Exposed-face count divided by foreground volume.");

    m.def(
        "evaluate_case",
        [](const LabelArray& annotation, const LabelArray& prediction,
           const std::array<double, 3>& spacing, double tau_mm,
           const std::string& case_id) {
            const auto r = volseg::evaluate_case(case_id, to_mask(annotation),
                                                 to_mask(prediction), spacing,
                                                 tau_mm);
            py::dict d;
            d["case_id"] = r.case_id;
            d["dsc"] = r.dsc;
            d["nsd"] = r.nsd;
            d["sensitivity"] = opt_float(r.sensitivity);
            d["precision"] = opt_float(r.precision);
            d["f1"] = opt_float(r.f1);
            d["accuracy"] = opt_float(r.accuracy);
            return d;
        },
        py::arg("annotation"), py::arg("prediction"),
        py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
        py::arg("tau_mm") = 3.0, py::arg("case_id") = "case",
        "All six per-case metrics; undefined ratios come back as None.");

    m.def(
        "make_split",
        [](const std::vector<std::string>& case_ids, int64_t k, uint64_t seed,
           double train_fraction) {
            const auto plan = volseg::make_split(case_ids, k, seed, train_fraction);
            py::list folds;
            for (const auto& fold : plan.folds) {
                py::dict d;
                d["train"] = fold.train_ids;
                d["test"] = fold.test_ids;
                folds.append(d);
            }
            return folds;
        },
        py::arg("case_ids"), py::arg("k"), py::arg("seed"),
        py::arg("train_fraction") = 0.2,
        "Deterministic k-fold low-data split; each fold trains on the "
        "configured fraction and tests on the rest.");

    m.def("poly_lr", &volseg::poly_lr, py::arg("lr0"), py::arg("epoch"),
          py::arg("max_epochs"), py::arg("power") = 0.9,
          "Polynomially decaying learning rate lr0*(1-e/E)^power.");

    m.def(
        "pretrain",
        [](const std::vector<std::string>& case_paths,
           const std::string& out_checkpoint, const std::string& task,
           int64_t epochs, int64_t iters_per_epoch, int64_t batch_size,
           const std::array<int64_t, 3>& patch_size, double fg_bias,
           uint64_t seed, double early_stop_dice) {
            volseg::PretrainConfig cfg;
            cfg.spec = volseg::NetworkSpec::desk_default();
            cfg.train.epochs = epochs;
            cfg.train.iters_per_epoch = iters_per_epoch;
            cfg.train.batch_size = batch_size;
            cfg.train.patch_size = patch_size;
            cfg.train.fg_bias = fg_bias;
            cfg.train.seed = seed;
            cfg.train.early_stop_dice = early_stop_dice;
            cfg.opt = {0.01, 0.99, epochs, 0.9};
            Checkpoint ckpt;
            {
                py::gil_scoped_release release;
                ckpt = volseg::pretrain_single({task, case_paths}, cfg);
                volseg::save_checkpoint(out_checkpoint, ckpt);
            }
            py::dict d;
            d["task"] = ckpt.task;
            d["epochs"] = ckpt.epoch;
            d["val_dice"] = ckpt.val_dice;
            d["path"] = out_checkpoint;
            return d;
        },
        py::arg("case_paths"), py::arg("out_checkpoint"), py::arg("task") = "task",
        py::arg("epochs") = 25, py::arg("iters_per_epoch") = 15,
        py::arg("batch_size") = 2,
        py::arg("patch_size") = std::array<int64_t, 3>{8, 12, 12},
        py::arg("fg_bias") = 0.5, py::arg("seed") = 0,
        py::arg("early_stop_dice") = -1.0,
        "Trains a desk-scale single-task model on the given case files and "
        "writes the checkpoint; returns its summary.");

    m.def(
        "checkpoint_info",
        [](const std::string& path) {
            const Checkpoint ckpt = volseg::load_checkpoint(path);
            py::dict d;
            d["task"] = ckpt.task;
            d["epoch"] = ckpt.epoch;
            d["val_dice"] = ckpt.val_dice;
            d["parameters"] = ckpt.params.total_scalars();
            d["trainable"] = ckpt.params.trainable_scalars();
            d["hybrid"] = ckpt.params.has("fusion/select_a");
            py::dict stats;
            stats["p_lo"] = ckpt.stats.p_lo;
            stats["p_hi"] = ckpt.stats.p_hi;
            stats["mean"] = ckpt.stats.mean;
            stats["std"] = ckpt.stats.std;
            d["stats"] = stats;
            return d;
        },
        py::arg("path"), "Header summary of a saved checkpoint.");

    m.def(
        "predict_probs",
        [](const std::string& checkpoint, const FloatArray& volume,
           const std::array<double, 3>& spacing,
           const std::array<int64_t, 3>& patch_size) {
            const Tensor probs = probs_for(checkpoint, volume, spacing, patch_size);
            const auto& s = probs.shape();  // [classes, z, y, x]
            const std::vector<py::ssize_t> out_shape{s[0], s[1], s[2], s[3]};
            py::array_t<double> out(out_shape);
            std::memcpy(out.mutable_data(), probs.data(),
                        static_cast<size_t>(probs.numel()) * sizeof(double));
            return out;
        },
        py::arg("checkpoint"), py::arg("volume"),
        py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
        py::arg("patch_size") = std::array<int64_t, 3>{8, 12, 12},
        "Sliding-window class probabilities [classes, z, y, x] for a raw "
        "volume, normalized with the checkpoint's stored statistics.");

    m.def(
        "predict_labels",
        [](const std::string& checkpoint, const FloatArray& volume,
           const std::array<double, 3>& spacing,
           const std::array<int64_t, 3>& patch_size) {
            const Tensor probs = probs_for(checkpoint, volume, spacing, patch_size);
            return from_mask(volseg::argmax_labels(probs));
        },
        py::arg("checkpoint"), py::arg("volume"),
        py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
        py::arg("patch_size") = std::array<int64_t, 3>{8, 12, 12},
        "Hard label map [z, y, x] from the same tiled inference.");

    m.def(
        "render_montage",
        [](const std::string& png_path, const FloatArray& volume,
           const LabelArray& annotation, const LabelArray& prediction,
           int64_t max_slices) {
            return volseg::render_montage(
                png_path, to_volume(volume, {1.0, 1.0, 1.0}, "render"),
                to_mask(annotation), to_mask(prediction), max_slices);
        },
        py::arg("png_path"), py::arg("volume"), py::arg("annotation"),
        py::arg("prediction"), py::arg("max_slices") = 6,
        "Writes the contour-overlay montage PNG; returns the slice indices "
        "rendered.");
}
