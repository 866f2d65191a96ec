#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tist/eval_report.hpp"
#include "tist/experiment.hpp"
#include "tist/pseudolabel.hpp"
#include "tist/report.hpp"

namespace py = pybind11;
using namespace tist;

namespace {

using Probs = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;
using Images = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Probs& a) {
  if (a.ndim() != 4) throw InvalidInput("expected an N x C x H x W array");
  Tensor<double> t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                   static_cast<int>(a.shape(3)));
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<std::uint8_t> from_mask(const ConfidenceMask& m) {
  py::array_t<std::uint8_t> out({m.n, m.height, m.width});
  std::copy(m.mask.begin(), m.mask.end(), out.mutable_data());
  return out;
}

py::array_t<std::int32_t> from_labels(const LabelBatch& l) {
  py::array_t<std::int32_t> out({l.n, l.height, l.width});
  std::copy(l.labels.begin(), l.labels.end(), out.mutable_data());
  return out;
}

LabelMap to_map(const Labels& a) {
  if (a.ndim() != 2) throw InvalidInput("expected an H x W label array");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

py::dict dataset_arrays(const Dataset& ds) {
  const auto& first = ds.front().image;
  py::array_t<float> images({static_cast<int>(ds.size()), first.channels, first.height, first.width});
  py::array_t<std::int32_t> masks({static_cast<int>(ds.size()), first.height, first.width});
  py::list ids;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::copy(ds[i].image.pixels.begin(), ds[i].image.pixels.end(), images.mutable_data() + i * first.pixels.size());
    std::copy(ds[i].label->labels.begin(), ds[i].label->labels.end(), masks.mutable_data() + i * first.plane_size());
    ids.append(ds[i].id);
  }
  py::dict d;
  d["images"] = images;
  d["masks"] = masks;
  d["ids"] = ids;
  return d;
}

py::object json_to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict run_result(const RunResult& r) {
  py::dict d;
  d["run_dir"] = r.run_dir;
  d["config_hash"] = r.config_hash;
  d["complete"] = r.complete;
  d["history"] = json_to_py(Json(r.history));
  return d;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) out.push_back(parse_method(n));
  return out;
}

}  // namespace

PYBIND11_MODULE(tist, m) {
  m.doc() = "Transformation-invariant self-training for segmentation under domain shift";

  py::register_exception<InvalidConfig>(m, "InvalidConfig", PyExc_ValueError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  m.attr("IGNORE_INDEX") = kIgnoreIndex;

  m.def(
      "confidence_mask", [](const Probs& probs, double tau) { return from_mask(confidence_mask(to_tensor(probs), tau)); },
      py::arg("probs"), py::arg("tau"), "Pixels whose peak probability exceeds tau, as an N x H x W uint8 array.");
  m.def(
      "tist_pseudo_labels",
      [](const Probs& plain, const Probs& transformed, double tau) {
        ConfidenceMask mask;
        const auto labels = transformation_invariant_labels(to_tensor(plain), to_tensor(transformed), tau, &mask);
        return py::make_tuple(from_labels(labels), from_mask(mask));
      },
      py::arg("plain"), py::arg("transformed"), py::arg("tau"),
      "Labels of the transformed view where both views are confident, with the mask.");
  m.def(
      "st_pseudo_labels",
      [](const Probs& transformed, double tau) {
        const auto t = to_tensor(transformed);
        const auto mask = confidence_mask(t, tau);
        return py::make_tuple(from_labels(make_pseudo_labels(t, mask)), from_mask(mask));
      },
      py::arg("transformed"), py::arg("tau"));
  m.def(
      "dice_score", [](const Labels& pred, const Labels& gt, int class_id) {
        return dice_score(to_map(pred), to_map(gt), class_id);
      },
      py::arg("pred"), py::arg("gt"), py::arg("class_id") = 1);
  m.def("relative_dice", &relative_dice, py::arg("method_percent"), py::arg("supervised_percent"));
  m.def(
      "lambda_at",
      [](double epoch, int total_epochs, bool squared) { return lambda_at(RampSchedule{total_epochs, squared}, epoch); },
      py::arg("epoch"), py::arg("total_epochs"), py::arg("squared") = false);

  m.def(
      "generate_synthetic",
      [](std::uint64_t seed, int num_source, int num_target, int size, int channels, bool shift) {
        SynthConfig c;
        c.num_source = num_source;
        c.num_target = num_target;
        c.height = c.width = size;
        c.channels = channels;
        if (!shift) c.shift = DomainShift{0, 0, 0};
        const auto [source, target] = generate_synthetic(c, seed);
        py::dict d;
        d["source"] = dataset_arrays(source);
        d["target"] = dataset_arrays(target);
        return d;
      },
      py::arg("seed") = 0, py::arg("num_source") = 8, py::arg("num_target") = 8, py::arg("size") = 64,
      py::arg("channels") = 3, py::arg("shift") = true);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init([](const std::string& profile) { return profile_defaults(parse_profile(profile)); }),
           py::arg("profile") = "desk")
      .def(
          "set",
          [](ExperimentConfig& c, const std::string& key, py::object value) {
            std::string text = py::str(value);
            if (py::isinstance<py::bool_>(value)) text = value.cast<bool>() ? "true" : "false";
            set_option(c, key, text);
            return &c;
          },
          py::arg("key"), py::arg("value"), py::return_value_policy::reference_internal)
      .def("validate", [](const ExperimentConfig& c) { validate(c); })
      .def("hash", &experiment_hash)
      .def("to_ini", &to_ini)
      .def("as_dict", [](const ExperimentConfig& c) { return json_to_py(full_json(c)); })
      .def("run_name", &run_name)
      .def_static("from_file", [](const std::filesystem::path& p) { return resolve_config(read_config_file(p)); })
      .def_static("keys", &option_keys)
      .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; })
      .def("__repr__", [](const ExperimentConfig& c) { return "<tist.Config " + experiment_hash(c) + ">"; });

  m.def(
      "train",
      [](const ExperimentConfig& c, const std::filesystem::path& run_dir, std::optional<int> max_epochs) {
        RunOptions options;
        options.max_epochs_this_call = max_epochs;
        py::gil_scoped_release release;
        auto r = run_experiment(c, run_dir, options);
        py::gil_scoped_acquire acquire;
        return run_result(r);
      },
      py::arg("config"), py::arg("run_dir"), py::arg("max_epochs") = py::none(),
      "Trains one configuration into run_dir and returns its history.");
  m.def(
      "resume",
      [](const std::filesystem::path& checkpoint) {
        py::gil_scoped_release release;
        auto r = resume_experiment(checkpoint);
        py::gil_scoped_acquire acquire;
        return run_result(r);
      },
      py::arg("checkpoint"));
  m.def(
      "ablate",
      [](const ExperimentConfig& base, const std::filesystem::path& sweep_dir, const std::vector<std::string>& methods,
         const std::vector<double>& taus, const std::vector<std::uint64_t>& seeds, const std::vector<double>& fractions,
         const std::vector<int>& folds) {
        AblationSpec spec;
        spec.base = base;
        spec.methods = parse_methods(methods);
        spec.taus = taus;
        spec.seeds = seeds;
        spec.fractions = fractions;
        spec.folds = folds;
        AblationResult r;
        {
          py::gil_scoped_release release;
          r = run_ablation(spec, sweep_dir);
        }
        py::list points;
        for (const auto& o : r.outcomes) {
          py::dict p;
          p["method"] = to_string(o.point.method);
          p["tau"] = o.point.tau;
          p["fraction"] = o.point.fraction;
          p["seed"] = o.point.seed;
          p["fold"] = o.point.fold;
          p["run_dir"] = o.run_dir;
          p["ok"] = o.ok;
          p["error"] = o.error;
          points.append(p);
        }
        py::dict d;
        d["sweep_dir"] = r.sweep_dir;
        d["points"] = points;
        d["failures"] = r.failures();
        return d;
      },
      py::arg("config"), py::arg("sweep_dir"), py::arg("methods") = std::vector<std::string>{"st", "tist"},
      py::arg("taus") = std::vector<double>{0.80, 0.85, 0.90, 0.95}, py::arg("seeds") = std::vector<std::uint64_t>{0},
      py::arg("fractions") = std::vector<double>{1.0}, py::arg("folds") = std::vector<int>{0});
  m.def(
      "predict",
      [](const std::filesystem::path& checkpoint, const Images& images) {
        if (images.ndim() != 4) throw InvalidInput("expected an N x C x H x W image array");
        const auto loaded = read_checkpoint(checkpoint);
        const int n = static_cast<int>(images.shape(0));
        std::vector<Image> owned;
        for (int i = 0; i < n; ++i) {
          Image im(static_cast<int>(images.shape(1)), static_cast<int>(images.shape(2)),
                   static_cast<int>(images.shape(3)));
          std::copy(images.data() + i * im.pixels.size(), images.data() + (i + 1) * im.pixels.size(),
                    im.pixels.begin());
          owned.push_back(std::move(im));
        }
        std::vector<const Image*> ptrs;
        for (const auto& im : owned) ptrs.push_back(&im);
        const auto maps = predict_labels(loaded.model, ptrs);
        py::array_t<std::int32_t> out({n, static_cast<int>(images.shape(2)), static_cast<int>(images.shape(3))});
        for (int i = 0; i < n; ++i)
          std::copy(maps[i].labels.begin(), maps[i].labels.end(), out.mutable_data() + i * maps[i].labels.size());
        return out;
      },
      py::arg("checkpoint"), py::arg("images"), "Argmax labels of a checkpoint's model for a batch of images.");
}
