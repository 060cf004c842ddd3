#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fisherflow/data.hpp"
#include "fisherflow/errors.hpp"
#include "fisherflow/functionals.hpp"
#include "fisherflow/heat.hpp"
#include "fisherflow/mesh.hpp"
#include "fisherflow/verify.hpp"

namespace py = pybind11;
using namespace fisherflow;

namespace {

// TriMesh is shared as const; pybind11 holders want a mutable pointee.
struct Mesh {
  MeshPtr ptr;
};

Eigen::MatrixXd vertex_array(const TriMesh& m) {
  Eigen::MatrixXd v(m.num_vertices(), 2);
  for (int i = 0; i < m.num_vertices(); ++i) v.row(i) = m.vertices()[i].transpose();
  return v;
}

Eigen::MatrixXi triangle_array(const TriMesh& m) {
  Eigen::MatrixXi t(m.num_triangles(), 3);
  for (int i = 0; i < m.num_triangles(); ++i) {
    for (int c = 0; c < 3; ++c) t(i, c) = m.triangles()[i][c];
  }
  return t;
}

Density density(const Mesh& m, const Eigen::VectorXd& values) { return Density(m.ptr, values); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fisherflow core: meshes, heat flow, Fisher information and verification experiments";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<MeshError>(m, "MeshError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<DomainSpec>(m, "DomainSpec")
      .def_static("rectangle", &DomainSpec::rectangle, py::arg("width"), py::arg("height"), py::arg("h"))
      .def_static("polar_star", &DomainSpec::polar_star, py::arg("r0"), py::arg("a"), py::arg("k"), py::arg("h"))
      .def_static("from_json", [](const std::string& s) { return DomainSpec::from_json(nlohmann::json::parse(s)); })
      .def("to_json", [](const DomainSpec& s) { return s.to_json().dump(); })
      .def_readonly("h", &DomainSpec::h);

  py::class_<Mesh>(m, "Mesh")
      .def_property_readonly("vertices", [](const Mesh& s) { return vertex_array(*s.ptr); })
      .def_property_readonly("triangles", [](const Mesh& s) { return triangle_array(*s.ptr); })
      .def_property_readonly("boundary_loop", [](const Mesh& s) { return s.ptr->boundary_loop(); })
      .def_property_readonly("lumped_mass", [](const Mesh& s) { return s.ptr->lumped_mass(); })
      .def_property_readonly("checksum", [](const Mesh& s) { return s.ptr->checksum(); })
      .def_property_readonly("num_vertices", [](const Mesh& s) { return s.ptr->num_vertices(); })
      .def("to_json", [](const Mesh& s) { return s.ptr->to_json().dump(); });

  m.def("build_mesh", [](const DomainSpec& spec) { return Mesh{build_mesh(spec)}; }, py::arg("spec"));
  m.def(
      "curvature_json", [](const DomainSpec& spec) { return boundary_curvature(spec).to_json().dump(); },
      py::arg("spec"));

  m.def("eigenfunction_density", [](const Mesh& s) { return eigenfunction_density(s.ptr).values(); }, py::arg("mesh"));
  m.def(
      "bump_density",
      [](const Mesh& s, double x, double y, double sigma) { return bump_density(s.ptr, Vec2(x, y), sigma).values(); },
      py::arg("mesh"), py::arg("x"), py::arg("y"), py::arg("sigma"));
  m.def(
      "random_smooth_density", [](const Mesh& s, std::uint64_t seed) { return random_smooth_density(s.ptr, seed).values(); },
      py::arg("mesh"), py::arg("seed"));

  m.def("entropy", [](const Mesh& s, const Eigen::VectorXd& v) { return entropy(density(s, v)); }, py::arg("mesh"),
        py::arg("values"));
  m.def("fisher", [](const Mesh& s, const Eigen::VectorXd& v) { return fisher(density(s, v)); }, py::arg("mesh"),
        py::arg("values"));
  m.def(
      "fisher_m", [](const Mesh& s, const Eigen::VectorXd& v, double mm) { return fisher_m(density(s, v), mm); },
      py::arg("mesh"), py::arg("values"), py::arg("m"));

  // Returns (times, samples) with one row per sample.
  m.def(
      "heat_flow",
      [](const Mesh& s, const Eigen::VectorXd& v, double T, double dt, const std::vector<double>& times) {
        Curve c;
        {
          py::gil_scoped_release release;
          c = HeatOperator(s.ptr).evolve(density(s, v), T, dt, times);
        }
        Eigen::MatrixXd out(c.size(), s.ptr->num_vertices());
        for (int k = 0; k < c.size(); ++k) out.row(k) = c.densities[k].values().transpose();
        return py::make_tuple(c.times, out);
      },
      py::arg("mesh"), py::arg("values"), py::arg("T"), py::arg("dt"), py::arg("sample_times"));

  m.def("experiments", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const ExperimentInfo& e : experiments()) out.emplace_back(e.name, e.claim);
    return out;
  });
  m.def(
      "default_config_json", [](const std::string& name) { return default_config(name).to_json().dump(); },
      py::arg("name"));
  m.def(
      "run_experiment_json",
      [](const std::string& name, const std::string& overrides) {
        const ExperimentConfig cfg = ExperimentConfig::from_json(nlohmann::json::parse(overrides), default_config(name));
        py::gil_scoped_release release;
        return run_experiment(cfg).to_json().dump();
      },
      py::arg("name"), py::arg("overrides") = "{}");
}
