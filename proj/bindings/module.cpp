#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "usnas/common.hpp"
#include "usnas/controller.hpp"
#include "usnas/genotype.hpp"
#include "usnas/image.hpp"
#include "usnas/metrics.hpp"
#include "usnas/network.hpp"
#include "usnas/supergraph.hpp"

namespace py = pybind11;
using namespace usnas;

namespace {

using PyCell = std::vector<std::tuple<int, std::string, int, std::string>>;

CellGenotype cell_from_py(const PyCell& rows) {
  CellGenotype g;
  for (const auto& [in_a, op_a, in_b, op_b] : rows) {
    auto a = op_from_name(op_a);
    auto b = op_from_name(op_b);
    if (!a || !b)
      throw ValidationError("unknown op name \"" + (a ? op_b : op_a) + "\"");
    g.nodes.push_back({in_a, *a, in_b, *b});
  }
  return g;
}

PyCell cell_to_py(const CellGenotype& g) {
  PyCell rows;
  for (const NodeSpec& n : g.nodes)
    rows.emplace_back(n.in_a, std::string(op_name(n.op_a)), n.in_b,
                      std::string(op_name(n.op_b)));
  return rows;
}

RoiImage image_from_array(const py::array_t<uint8_t>& arr) {
  if (arr.ndim() != 2)
    throw ValidationError("expected a 2-D uint8 array");
  RoiImage img;
  img.height = static_cast<int>(arr.shape(0));
  img.width = static_cast<int>(arr.shape(1));
  img.pixels.resize(static_cast<size_t>(img.height) * img.width);
  auto view = arr.unchecked<2>();
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      img.pixels[static_cast<size_t>(r) * img.width + c] = view(r, c);
  return img;
}

py::array_t<uint8_t> image_to_array(const RoiImage& img) {
  py::array_t<uint8_t> arr({img.height, img.width});
  auto view = arr.mutable_unchecked<2>();
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) view(r, c) = img.at(r, c);
  return arr;
}

py::dict metrics_to_dict(const Metrics& m) {
  py::dict d;
  d["tn"] = m.tn;
  d["fp"] = m.fp;
  d["fn"] = m.fn;
  d["tp"] = m.tp;
  d["tnr"] = m.tnr ? py::object(py::float_(*m.tnr)) : py::none();
  d["tpr"] = m.tpr ? py::object(py::float_(*m.tpr)) : py::none();
  d["pr"] = m.pr ? py::object(py::float_(*m.pr)) : py::none();
  d["acc"] = m.acc ? py::object(py::float_(*m.acc)) : py::none();
  return d;
}

CountingConfig counting_from(bool bn_affine, bool conv_bias,
                             bool projections) {
  return CountingConfig{bn_affine, conv_bias, projections};
}

}  // namespace

PYBIND11_MODULE(_usnas, m) {
  m.doc() = "ENAS micro-cell search toolkit (core bindings)";

  py::register_exception<ValidationError>(m, "ValidationError",
                                          PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def("op_names", [] {
    std::vector<std::string> names;
    for (int i = 0; i < kNumOps; ++i)
      names.emplace_back(op_name(static_cast<OpKind>(i)));
    return names;
  });

  m.def("validate", [](const PyCell& cell, int expected_b) {
    return validate(cell_from_py(cell), expected_b).violations;
  });
  m.def("encode", [](const PyCell& cell) { return encode(cell_from_py(cell)); });
  m.def("decode", [](const std::vector<int>& seq, int b) {
    return cell_to_py(decode(seq, b));
  });
  m.def("loose_ends",
        [](const PyCell& cell) { return loose_ends(cell_from_py(cell)); });
  m.def(
      "cell_param_count",
      [](const PyCell& cell, int c_in, int c_out, bool bn_affine,
         bool conv_bias, bool projections) {
        return cell_param_count(cell_from_py(cell), c_in, c_out,
                                counting_from(bn_affine, conv_bias, projections));
      },
      py::arg("cell"), py::arg("c_in"), py::arg("c_out"),
      py::arg("bn_affine") = true, py::arg("conv_bias") = false,
      py::arg("projections") = true);
  m.def("to_dot", [](const PyCell& cell, const std::string& title) {
    return to_dot(cell_from_py(cell), title);
  });

  m.def("make_stack_plan", [](const std::string& variant) {
    StackPlan plan = make_stack_plan(variant_from_name(variant), 20, 2);
    std::string tags;
    for (CellTag t : plan.cells) tags += t == CellTag::kReduction ? 'R' : 'N';
    return tags;
  });

  m.def(
      "network_param_count",
      [](const PyCell& normal, const PyCell& reduction,
         const std::string& variant, int base_channels, int num_classes,
         bool bn_affine, bool conv_bias) {
        ArchPair arch{cell_from_py(normal), cell_from_py(reduction)};
        StackPlan plan =
            make_stack_plan(variant_from_name(variant), base_channels,
                            num_classes);
        NetworkSpec spec = build_network(arch, plan, variant);
        return network_param_count(
            spec, counting_from(bn_affine, conv_bias, true));
      },
      py::arg("normal"), py::arg("reduction"), py::arg("variant"),
      py::arg("base_channels") = 36, py::arg("num_classes") = 2,
      py::arg("bn_affine") = true, py::arg("conv_bias") = false);

  m.def(
      "alexnet_param_count",
      [](int num_classes, int input_side) {
        return network_param_count(build_alexnet(num_classes, input_side),
                                   CountingConfig{});
      },
      py::arg("num_classes") = 2, py::arg("input_side") = 100);

  m.def("compute_metrics", [](long tn, long fp, long fn, long tp) {
    return metrics_to_dict(compute_metrics(tn, fp, fn, tp));
  });

  m.def("mirror", [](const py::array_t<uint8_t>& arr) {
    return image_to_array(mirror(image_from_array(arr)));
  });
  m.def("rotate", [](const py::array_t<uint8_t>& arr, int degrees) {
    return image_to_array(rotate(image_from_array(arr), degrees));
  });
  m.def("svd_truncate", [](const py::array_t<uint8_t>& arr, double ratio) {
    return image_to_array(svd_truncate(image_from_array(arr), ratio));
  });
  m.def(
      "resize_bicubic",
      [](const py::array_t<uint8_t>& arr, int side) {
        return image_to_array(resize_bicubic(image_from_array(arr), side));
      },
      py::arg("image"), py::arg("side") = 100);
  m.def("augment_all", [](const py::array_t<uint8_t>& arr) {
    std::vector<py::array_t<uint8_t>> out;
    for (const RoiImage& img : augment_all(image_from_array(arr)))
      out.push_back(image_to_array(img));
    return out;
  });

  m.def(
      "sample_architecture",
      [](int b, uint64_t seed) {
        ControllerPolicy policy(b, ControllerHyperparams{}, seed);
        Rng rng(seed + 1);
        auto [arch, trace] = policy.sample(rng);
        py::dict d;
        d["normal"] = cell_to_py(arch.normal);
        d["reduction"] = cell_to_py(arch.reduction);
        d["decisions"] = trace.decisions;
        d["log_probs"] = trace.log_probs;
        d["entropies"] = trace.entropies;
        return d;
      },
      py::arg("b") = 5, py::arg("seed") = 0);
}
