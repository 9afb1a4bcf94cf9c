#include "roadprompt/labels.hpp"
#include "roadprompt/serve.hpp"
#include "roadprompt/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace roadprompt;

namespace {

using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// Any nonzero value is road.
BinaryMask to_mask(const MaskArray& a) {
    if (a.ndim() != 2) throw InvalidArgument("mask must be a 2-D array");
    const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    std::vector<std::uint8_t> v(a.data(), a.data() + a.size());
    for (auto& x : v) x = x != 0;
    return BinaryMask(h, w, std::move(v));
}

py::array_t<bool> from_mask(const BinaryMask& m) {
    py::array_t<bool> out({m.height(), m.width()});
    auto* dst = out.mutable_data();
    for (std::size_t i = 0; i < m.size(); ++i) dst[i] = m.at_flat(i) != 0;
    return out;
}

Image to_image(const MaskArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw InvalidArgument("image must be an H x W x 3 uint8 array");
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
    return img;
}

py::array_t<std::uint8_t> from_image(const Image& img) {
    py::array_t<std::uint8_t> out({img.height, img.width, 3});
    std::copy(img.rgb.begin(), img.rgb.end(), out.mutable_data());
    return out;
}

std::vector<PointPrompt> to_points(const std::vector<std::pair<int, int>>& pts, Polarity pol) {
    std::vector<PointPrompt> out;
    for (auto [h, w] : pts) out.push_back({h, w, pol});
    return out;
}

std::vector<std::pair<int, int>> from_points(const std::vector<PointPrompt>& pts) {
    std::vector<std::pair<int, int>> out;
    for (const auto& p : pts) out.emplace_back(p.h, p.w);
    return out;
}

py::dict metrics_dict(const MetricReport& r) {
    py::dict d;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["iou"] = r.iou;
    d["f1"] = r.f1;
    return d;
}

py::dict stage_dict(const StageResult& r) {
    py::dict d;
    d["auto"] = from_mask(r.auto_mask);
    d["highrecall"] = from_mask(r.highrecall_mask);
    d["stage2"] = from_mask(r.stage2_mask);
    d["stage3"] = from_mask(r.stage3_mask);
    d["final"] = from_mask(r.final_mask);
    d["strategy"] = to_string(r.strategy);
    return d;
}

py::tuple loss_tuple(const LossValue& l) {
    py::array_t<float> g(static_cast<py::ssize_t>(l.grad.size()));
    std::copy(l.grad.begin(), l.grad.end(), g.mutable_data());
    return py::make_tuple(l.value, g);
}

std::span<const float> as_span(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), static_cast<std::size_t>(a.size())};
}

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

SyntheticSpec make_spec(int size, int count, std::uint64_t seed, std::uint64_t texture_seed) {
    SyntheticSpec s;
    s.image_size = size;
    s.count = count;
    s.seed = seed;
    s.texture_seed = texture_seed;
    return s;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Patch-constrained promptable road segmentation";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ModelError>(m, "ModelError", PyExc_RuntimeError);
    py::register_exception<SessionNotFound>(m, "SessionNotFound", PyExc_KeyError);
    py::register_exception<BadUpload>(m, "BadUpload", PyExc_ValueError);

    // data
    m.def(
        "render_synthetic",
        [](int index, int size, std::uint64_t seed, std::uint64_t texture_seed) {
            const auto [img, mask] = render_synthetic(make_spec(size, 1, seed, texture_seed), index);
            return py::make_tuple(from_image(img), from_mask(mask));
        },
        py::arg("index"), py::arg("size") = 128, py::arg("seed") = 0, py::arg("texture_seed") = 0);
    m.def(
        "generate_synthetic",
        [](const std::filesystem::path& out, int count, int size, std::uint64_t seed) {
            const DatasetManifest d = generate_synthetic(make_spec(size, count, seed, 0), out);
            py::dict splits;
            for (Split s : {Split::train, Split::val, Split::test}) splits[to_string(s)] = d.split(s).size();
            return splits;
        },
        py::arg("out"), py::arg("count") = 500, py::arg("size") = 128, py::arg("seed") = 0);

    // labels, morphology, sampling
    m.def(
        "make_positive_label",
        [](const MaskArray& mask, const std::vector<std::pair<int, int>>& pts, int patch_h, int patch_w) {
            const BinaryMask t = to_mask(mask);
            return from_mask(make_positive_label(t, to_points(pts, Polarity::positive),
                                                 PatchGrid(patch_h, patch_w, t.height(), t.width())));
        },
        py::arg("mask"), py::arg("points"), py::arg("patch_h") = 32, py::arg("patch_w") = 32);
    m.def(
        "make_negative_label",
        [](const MaskArray& mask, const std::vector<std::pair<int, int>>& pts, int patch_h, int patch_w) {
            const BinaryMask t = to_mask(mask);
            return from_mask(make_negative_label(t, to_points(pts, Polarity::negative),
                                                 PatchGrid(patch_h, patch_w, t.height(), t.width())));
        },
        py::arg("mask"), py::arg("points"), py::arg("patch_h") = 32, py::arg("patch_w") = 32);
    m.def("erode", [](const MaskArray& a, int k) { return from_mask(erode(to_mask(a), k)); }, py::arg("mask"),
          py::arg("k"));
    m.def("dilate", [](const MaskArray& a, int k) { return from_mask(dilate(to_mask(a), k)); }, py::arg("mask"),
          py::arg("k"));
    m.def("opening", [](const MaskArray& a, int k) { return from_mask(opening(to_mask(a), k)); }, py::arg("mask"),
          py::arg("k"));
    m.def(
        "generate_prompts",
        [](const MaskArray& pred, const MaskArray& truth, int fnm_kernel, int fpm_kernel, int density, int patch) {
            const BinaryMask p = to_mask(pred), t = to_mask(truth);
            const PromptBatch b = generate_prompts(error_maps(p, t), {fnm_kernel, fpm_kernel, density},
                                                   PatchGrid(patch, patch, p.height(), p.width()));
            return py::make_tuple(from_points(b.positives), from_points(b.negatives));
        },
        py::arg("prediction"), py::arg("truth"), py::arg("fnm_kernel") = 3, py::arg("fpm_kernel") = 7,
        py::arg("density") = 1, py::arg("patch") = 32);
    m.def(
        "sample_prompts",
        [](const MaskArray& mask, std::uint64_t seed) {
            Rng rng(seed);
            const PromptCounts n = draw_counts(SamplerConfig{}, rng);
            const PromptBatch b = sample_points(to_mask(mask), n.positives, n.negatives, rng);
            return py::make_tuple(from_points(b.positives), from_points(b.negatives));
        },
        py::arg("mask"), py::arg("seed") = 0);

    // losses: (value, gradient)
    m.def("dice_loss", [](const FloatArray& p, const MaskArray& t) { return loss_tuple(dice_loss(as_span(p), to_mask(t))); });
    m.def("focal_loss",
          [](const FloatArray& p, const MaskArray& t) { return loss_tuple(focal_loss(as_span(p), to_mask(t))); });
    m.def("head_loss",
          [](const FloatArray& o, const MaskArray& t) { return loss_tuple(head_loss(as_span(o), to_mask(t))); });
    m.def("highrecall_loss",
          [](const FloatArray& o, const MaskArray& t) { return loss_tuple(highrecall_loss(as_span(o), to_mask(t))); });
    m.def("negative_region_loss", [](const FloatArray& o, const MaskArray& t, const MaskArray& neg) {
        return loss_tuple(negative_region_loss(as_span(o), to_mask(t), to_mask(neg)));
    });

    m.def("metrics", [](const MaskArray& pred, const MaskArray& truth) {
        return metrics_dict(metrics(to_mask(pred), to_mask(truth)));
    });

    // model and inference
    py::class_<RoadModel, std::shared_ptr<RoadModel>>(m, "Model")
        .def(py::init([](std::uint64_t seed, int patch, const std::string& backbone) {
                 ModelConfig cfg;
                 cfg.seed = seed;
                 cfg.patch_h = cfg.patch_w = patch;
                 cfg.backbone = backbone_from_string(backbone) == BackboneVariant::toy ? BackboneSpec::toy()
                                                                                        : BackboneSpec::foundation();
                 return std::make_shared<RoadModel>(cfg);
             }),
             py::arg("seed") = 0, py::arg("patch") = 32, py::arg("backbone") = "toy")
        .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<RoadModel>(RoadModel::load(p)); })
        .def("save", [](const RoadModel& self, const std::filesystem::path& p) { self.save(p); })
        .def_property_readonly("encoder_invocations", &RoadModel::encoder_invocations)
        .def(
            "segment",
            [](const RoadModel& self, const MaskArray& image, const std::vector<std::pair<int, int>>& positives,
               const std::vector<std::pair<int, int>>& negatives, const std::string& strategy, double threshold) {
                py::gil_scoped_release release;
                const Stage1Result s1 = stage1(to_image(image), self, threshold);
                PromptBatch b{to_points(positives, Polarity::positive), to_points(negatives, Polarity::negative)};
                const StageResult r = refine(s1.embedding, s1.auto_mask, s1.highrecall_mask, b, self,
                                             fusion_from_string(strategy), threshold);
                py::gil_scoped_acquire acquire;
                return stage_dict(r);
            },
            py::arg("image"), py::arg("positives") = std::vector<std::pair<int, int>>{},
            py::arg("negatives") = std::vector<std::pair<int, int>>{}, py::arg("strategy") = "sum",
            py::arg("threshold") = kDefaultThreshold);

    m.def(
        "simulate",
        [](const RoadModel& model, const std::filesystem::path& data, const std::string& split, int fnm_kernel,
           int fpm_kernel, int density, const std::string& strategy) {
            const DatasetManifest d = load_manifest(data);
            const RefinementConfig cfg{{fnm_kernel, fpm_kernel, density}, fusion_from_string(strategy),
                                       kDefaultThreshold};
            const RefinementReport r = simulate_refinement(PairSource::from_entries(d.split(split_from_string(split))),
                                                           model, cfg);
            py::dict out;
            out["images"] = r.images;
            out["positive_prompts"] = r.positive_prompts;
            out["negative_prompts"] = r.negative_prompts;
            out["before"] = metrics_dict(r.before_metrics());
            out["after"] = metrics_dict(r.after_metrics());
            return out;
        },
        py::arg("model"), py::arg("data"), py::arg("split") = "test", py::arg("fnm_kernel") = 3,
        py::arg("fpm_kernel") = 7, py::arg("density") = 1, py::arg("strategy") = "sum");
    m.def(
        "sweep_json",
        [](const RoadModel& model, const std::filesystem::path& data, const std::string& split) {
            const DatasetManifest d = load_manifest(data);
            const auto rows = sweep(PairSource::from_entries(d.split(split_from_string(split))), model, SweepAxes{});
            return reports_to_json(rows);
        },
        py::arg("model"), py::arg("data"), py::arg("split") = "test");

    m.def(
        "train",
        [](const std::filesystem::path& data, const std::filesystem::path& out, const std::string& config_json,
           std::size_t max_train, std::size_t max_val) {
            const TrainConfig cfg = train_config_from_json(config_json);
            FitOptions opts{out};
            opts.max_train = max_train;
            opts.max_val = max_val;
            const FitResult r = fit(load_manifest(data), cfg, opts);
            py::list epochs;
            for (const auto& e : r.epochs) {
                py::dict d;
                d["epoch"] = e.epoch;
                d["loss"] = e.mean_loss;
                d["val_iou"] = e.val_iou;
                epochs.append(d);
            }
            py::dict res;
            res["best_checkpoint"] = r.best_checkpoint;
            res["last_checkpoint"] = r.last_checkpoint;
            res["epochs"] = epochs;
            return res;
        },
        py::arg("data"), py::arg("out"), py::arg("config_json") = "{}", py::arg("max_train") = 0,
        py::arg("max_val") = 0);

    // sessions
    py::class_<SessionStore>(m, "SessionStore")
        .def(py::init([](std::shared_ptr<RoadModel> model, std::uint64_t seed) {
                 SessionConfig cfg;
                 cfg.seed = seed;
                 return std::make_unique<SessionStore>(std::move(model), cfg);
             }),
             py::arg("model"), py::arg("seed") = 0)
        .def("create", [](SessionStore& s, const MaskArray& image) { return s.create(to_image(image)).id; })
        .def(
            "refine",
            [](SessionStore& s, const std::string& id, const std::vector<std::pair<int, int>>& positives,
               const std::vector<std::pair<int, int>>& negatives, std::optional<std::string> strategy, bool reset) {
                PromptBatch b{to_points(positives, Polarity::positive), to_points(negatives, Polarity::negative)};
                std::optional<FusionStrategy> st;
                if (strategy) st = fusion_from_string(*strategy);
                return stage_dict(s.refine(id, b, st, reset).result);
            },
            py::arg("id"), py::arg("positives") = std::vector<std::pair<int, int>>{},
            py::arg("negatives") = std::vector<std::pair<int, int>>{}, py::arg("strategy") = py::none(),
            py::arg("reset") = false)
        .def("undo", [](SessionStore& s, const std::string& id) { return stage_dict(s.undo(id).result); })
        .def("mask", [](SessionStore& s, const std::string& id,
                        const std::string& which) { return from_mask(s.mask(id, mask_kind_from_string(which))); })
        .def("encoder_runs", &SessionStore::encoder_runs)
        .def("erase", &SessionStore::erase)
        .def("__len__", &SessionStore::size);
}
