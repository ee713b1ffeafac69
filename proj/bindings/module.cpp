#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "facl/facl.hpp"

namespace py = pybind11;

namespace {

facl::Tensor tensor_from_array(const py::array_t<double, py::array::c_style>& arr) {
  std::vector<std::size_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<std::size_t>(arr.shape(i));
  facl::Tensor t(shape);
  std::copy(arr.data(), arr.data() + arr.size(), t.data.begin());
  return t;
}

py::array_t<double> array_from_tensor(const facl::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> arr(shape);
  std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
  return arr;
}

facl::FaConfig fa_config(const std::string& method, std::size_t k, double mask_rate, double alpha,
                         double gaussian_sigma, std::size_t bank_capacity) {
  facl::FaConfig cfg;
  cfg.method = facl::fa_method_from(method);
  cfg.k = k;
  cfg.mask_rate = mask_rate;
  cfg.alpha = alpha;
  cfg.gaussian_sigma = gaussian_sigma;
  cfg.bank_capacity = bank_capacity;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive pre-training engine with feature augmentation";

  m.def("set_precision", [](const std::string& p) {
    if (p == "f32")
      facl::precision() = facl::Precision::f32;
    else if (p == "f64")
      facl::precision() = facl::Precision::f64;
    else
      throw py::value_error("precision must be f32 or f64");
  });
  m.def("get_precision",
        [] { return facl::precision() == facl::Precision::f32 ? "f32" : "f64"; });

  m.def(
      "gen_synthetic",
      [](std::size_t n_clusters, std::size_t latent_dim, std::size_t dim, std::size_t per_cluster,
         double spread, double map_gain, std::uint64_t projection_seed, std::uint64_t seed) {
        facl::SyntheticSpec spec;
        spec.n_clusters = n_clusters;
        spec.latent_dim = latent_dim;
        spec.dim = dim;
        spec.per_cluster = per_cluster;
        spec.spread = spread;
        spec.map_gain = map_gain;
        spec.projection_seed = projection_seed;
        facl::VectorDataset ds = facl::gen_synthetic(spec, seed);
        py::array_t<int> y(std::vector<py::ssize_t>{static_cast<py::ssize_t>(ds.y.size())});
        std::copy(ds.y.begin(), ds.y.end(), y.mutable_data());
        return py::make_tuple(array_from_tensor(ds.x), y);
      },
      py::arg("n_clusters") = 10, py::arg("latent_dim") = 16, py::arg("dim") = 128,
      py::arg("per_cluster") = 500, py::arg("spread") = 0.1, py::arg("map_gain") = 1.0,
      py::arg("projection_seed") = 7, py::arg("seed") = 13);

  m.def(
      "info_nce",
      [](const py::array_t<double, py::array::c_style>& a,
         const py::array_t<double, py::array::c_style>& p, double tau, bool symmetric_negatives) {
        facl::Val av = facl::constant(tensor_from_array(a));
        facl::Val pv = facl::constant(tensor_from_array(p));
        return facl::info_nce(av, pv, tau, symmetric_negatives)->v.data[0];
      },
      py::arg("anchor"), py::arg("positive"), py::arg("tau") = 0.2,
      py::arg("symmetric_negatives") = false);

  m.def(
      "byol_similarity",
      [](const py::array_t<double, py::array::c_style>& p,
         const py::array_t<double, py::array::c_style>& t) {
        facl::Val pv = facl::constant(tensor_from_array(p));
        facl::Val tv = facl::constant(tensor_from_array(t));
        return facl::byol_similarity(pv, tv)->v.data[0];
      },
      py::arg("prediction"), py::arg("target"));

  py::class_<facl::FeatureBank>(m, "FeatureBank")
      .def(py::init<std::size_t, std::size_t>(), py::arg("capacity"), py::arg("dim"))
      .def_property_readonly("capacity", &facl::FeatureBank::capacity)
      .def_property_readonly("dim", &facl::FeatureBank::dim)
      .def_property_readonly("fill", &facl::FeatureBank::fill)
      .def("push",
           [](facl::FeatureBank& b, const py::array_t<double, py::array::c_style>& rows) {
             b.push(tensor_from_array(rows));
           })
      .def("topk", [](const facl::FeatureBank& b, const py::array_t<double, py::array::c_style>& q,
                      std::size_t k) { return b.topk_indices(tensor_from_array(q), k); });

  m.def(
      "feature_augment",
      [](const py::array_t<double, py::array::c_style>& z, const std::string& method,
         std::size_t k, double mask_rate, double alpha, double gaussian_sigma,
         const facl::FeatureBank* bank, std::uint64_t seed) {
        facl::FaConfig cfg = fa_config(method, k, mask_rate, alpha, gaussian_sigma,
                                       bank ? bank->capacity() : 4096);
        facl::Rng rng(seed);
        facl::Tensor zt = tensor_from_array(z);
        facl::FaPlan plan = facl::plan_fa(cfg, zt, bank, rng);
        py::list out;
        for (std::size_t c = 0; c < plan.k; ++c)
          out.append(array_from_tensor(facl::apply_fa_raw(plan, zt, c)));
        return out;
      },
      py::arg("z"), py::arg("method"), py::arg("k") = 1, py::arg("mask_rate") = 0.2,
      py::arg("alpha") = 0.85, py::arg("gaussian_sigma") = 0.2, py::arg("bank") = nullptr,
      py::arg("seed") = 0);

  m.def(
      "pair_table",
      [](const std::string& layout, const std::string& fa_method, std::size_t k,
         const std::string& pair_mode) {
        facl::LayoutSpec spec;
        spec.layout = facl::layout_from(layout);
        spec.stop_grad = facl::default_stop_grad(spec.layout);
        spec.fa.method = facl::fa_method_from(fa_method);
        spec.fa.k = k;
        spec.pair_mode =
            pair_mode == "fa_vs_fa" ? facl::PairMode::FAvsFA : facl::PairMode::OrigVsFA;
        return facl::pair_table(spec);
      },
      py::arg("layout"), py::arg("fa_method") = "none", py::arg("k") = 1,
      py::arg("pair_mode") = "orig_vs_fa");

  m.def("parse_config", [](const std::string& text) {
    facl::RunConfig::parse_text(text);  // throws on any invalid knob
  });

  m.def(
      "pretrain",
      [](const std::string& config_text, const std::string& out_dir) {
        facl::RunConfig cfg = facl::RunConfig::parse_text(config_text);
        facl::Trainer trainer(cfg);
        const std::string ckpt = trainer.run(out_dir);
        py::dict res;
        res["steps"] = trainer.step();
        res["final_loss"] = trainer.metrics().back().loss_total;
        res["checkpoint"] = ckpt;
        res["metrics"] = out_dir + "/metrics.csv";
        return res;
      },
      py::arg("config_text"), py::arg("out_dir"));

  m.def(
      "probe",
      [](const std::string& checkpoint_path, const std::string& config_text) {
        facl::RunConfig cfg = facl::RunConfig::parse_text(config_text);
        facl::Trainer trainer(cfg);
        trainer.load_model(facl::load_checkpoint(checkpoint_path));
        auto [ftr, fte] = trainer.probe_features();
        const auto& ytr = cfg.data_source == "synthetic" ? trainer.vectors().train.y
                                                         : trainer.images().train.labels;
        const auto& yte = cfg.data_source == "synthetic" ? trainer.vectors().test.y
                                                         : trainer.images().test.labels;
        std::size_t n_classes = 0;
        for (int y : ytr) n_classes = std::max<std::size_t>(n_classes, y + 1);
        py::dict res;
        res["linear"] =
            facl::linear_probe_features(ftr, ytr, fte, yte, n_classes, cfg.probe, cfg.seed);
        res["knn"] = facl::knn_probe_features(ftr, ytr, fte, yte, cfg.knn_k);
        return res;
      },
      py::arg("checkpoint"), py::arg("config_text"));
}
