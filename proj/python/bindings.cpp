#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "coupleface/cli.hpp"
#include "coupleface/config.hpp"
#include "coupleface/data_io.hpp"
#include "coupleface/distill_losses.hpp"
#include "coupleface/error.hpp"
#include "coupleface/eval.hpp"
#include "coupleface/mining.hpp"
#include "coupleface/model.hpp"

namespace py = pybind11;
using namespace coupleface;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const DoubleArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::vector<Label> to_labels(const LabelArray& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d label array");
  return std::vector<Label>(a.data(), a.data() + a.shape(0));
}

py::array_t<std::uint32_t> labels_array(const std::vector<Label>& v) {
  py::array_t<std::uint32_t> out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

RadVariant variant(const std::string& kind, double q) { return {parse_rad_kind(kind), q}; }

py::tuple report(const LossReport& r) {
  return py::make_tuple(r.value, to_array(r.grad_student), r.valid_count);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Teacher-student embedding distillation with mined mutual relations.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("error_name", [](int code) { return std::string(error_name(static_cast<ErrorCode>(code))); });

  m.def(
      "gen_synthetic",
      [](std::size_t num_identities, std::size_t per_identity, std::size_t input_dim, double noise_sigma,
         std::uint64_t seed) {
        LabeledDataset ds = gen_synthetic({num_identities, per_identity, input_dim, noise_sigma, seed});
        return py::make_tuple(to_array(ds.inputs), labels_array(ds.labels));
      },
      py::arg("num_identities"), py::arg("per_identity"), py::arg("input_dim"), py::arg("noise_sigma"),
      py::arg("seed") = 0);

  m.def(
      "write_embeddings",
      [](const std::filesystem::path& path, const DoubleArray& features, const LabelArray& labels,
         std::size_t num_identities) {
        write_embeddings(path, {to_matrix(features), to_labels(labels), num_identities});
      },
      py::arg("path"), py::arg("features"), py::arg("labels"), py::arg("num_identities"));
  m.def("read_embeddings", [](const std::filesystem::path& path) {
    EmbeddingMatrix e = read_embeddings(path);
    return py::make_tuple(to_array(e.features), labels_array(e.labels), e.num_identities);
  });
  m.def(
      "write_dataset",
      [](const std::filesystem::path& path, const DoubleArray& inputs, const LabelArray& labels,
         std::size_t num_identities) {
        write_dataset(path, {to_matrix(inputs), to_labels(labels), num_identities});
      },
      py::arg("path"), py::arg("inputs"), py::arg("labels"), py::arg("num_identities"));
  m.def("read_dataset", [](const std::filesystem::path& path) {
    LabeledDataset ds = read_dataset(path);
    return py::make_tuple(to_array(ds.inputs), labels_array(ds.labels), ds.num_identities);
  });

  m.def(
      "fcd_loss",
      [](const DoubleArray& s, const DoubleArray& t) { return report(fcd_loss(to_matrix(s), to_matrix(t))); },
      py::arg("student"), py::arg("teacher"));
  m.def(
      "rad_loss",
      [](const DoubleArray& s, const DoubleArray& t, const std::vector<DoubleArray>& negatives,
         const std::string& kind, double q) {
        std::vector<Matrix> neg;
        for (const auto& n : negatives) neg.push_back(to_matrix(n));
        return report(rad_loss(variant(kind, q), to_matrix(s), to_matrix(t), neg));
      },
      py::arg("student"), py::arg("teacher"), py::arg("negatives"), py::arg("kind") = "margin",
      py::arg("q") = 0.03);
  m.def(
      "rad_term",
      [](double delta, const std::string& kind, double q) {
        RadTerm t = rad_term(variant(kind, q), delta);
        return py::make_tuple(t.value, t.slope, t.valid);
      },
      py::arg("delta"), py::arg("kind") = "margin", py::arg("q") = 0.03);

  m.def(
      "compute_prototypes",
      [](const DoubleArray& features, const LabelArray& labels, std::size_t num_identities) {
        return to_array(compute_prototypes({to_matrix(features), to_labels(labels), num_identities}).prototypes);
      },
      py::arg("features"), py::arg("labels"), py::arg("num_identities"));
  m.def(
      "build_informative_sets",
      [](const DoubleArray& prototypes, std::size_t k) {
        Matrix p = to_matrix(prototypes);
        InformativeSets h = build_informative_sets({p, std::vector<std::size_t>(p.rows(), 1)}, k);
        py::array_t<std::uint32_t> out({h.num_identities(), h.k()});
        std::copy(h.table().begin(), h.table().end(), out.mutable_data());
        return out;
      },
      py::arg("prototypes"), py::arg("k"));

  m.def(
      "tar_at_far",
      [](const std::vector<double>& pos, const std::vector<double>& neg, double far) {
        TarResult r = tar_at_far(pos, neg, far);
        return py::make_tuple(r.tar, r.threshold);
      },
      py::arg("pos_scores"), py::arg("neg_scores"), py::arg("far"));
  m.def(
      "rank1_id",
      [](const DoubleArray& probes, const LabelArray& probe_labels, const DoubleArray& gallery,
         const LabelArray& gallery_labels, const DoubleArray& distractors) {
        std::vector<Label> pl = to_labels(probe_labels), gl = to_labels(gallery_labels);
        Label top = 0;
        for (Label y : pl) top = std::max(top, y);
        for (Label y : gl) top = std::max(top, y);
        return rank1_id({to_matrix(probes), pl, top + 1u}, {to_matrix(gallery), gl, top + 1u},
                        to_matrix(distractors));
      },
      py::arg("probes"), py::arg("probe_labels"), py::arg("gallery"), py::arg("gallery_labels"),
      py::arg("distractors"));

  m.def("config_entries", [](const std::string& text) {
    RunConfig c = RunConfig::parse(text);
    c.validate();
    return c.entries();
  });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
