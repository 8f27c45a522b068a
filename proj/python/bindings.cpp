#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "disent/checkpoint.hpp"
#include "disent/cli.hpp"
#include "disent/metrics.hpp"
#include "disent/service.hpp"

namespace py = pybind11;
using namespace disent;

namespace {

// Owns the service so its lifetime follows the Python object.
class PyService {
public:
    PyService(const std::string& checkpoint, const std::string& catalog_manifest) {
        auto model = load_model(checkpoint);
        auto catalog = load_manifest(catalog_manifest, model->config().image_size, model->schema());
        service_.load(model, checkpoint_hash(checkpoint), std::move(catalog));
    }

    std::pair<int, std::string> handle(const std::string& method, const std::string& path,
                                       const std::map<std::string, std::string>& query, const std::string& body) {
        py::gil_scoped_release release;
        const auto r = service_.handle(method, path, query, body);
        return {r.status, r.body.dump()};
    }

private:
    Service service_;
};

}  // namespace

PYBIND11_MODULE(_disent, m) {
    m.doc() = "Disentangled attribute representations: CLI, metrics and service handlers.";

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI command in-process; returns (exit_code, stdout, stderr).");

    m.def(
        "hopkins",
        [](const Eigen::MatrixXd& points, int64_t probe_count, int64_t repetitions, uint64_t seed) {
            std::mt19937_64 rng(seed);
            const auto r = hopkins_repeated(points, probe_count, repetitions, rng);
            return py::make_tuple(r.mean, r.std);
        },
        py::arg("points"), py::arg("probe_count"), py::arg("repetitions") = 20, py::arg("seed") = 0,
        "Mean and std of the Hopkins statistic over repeated draws.");

    m.def("frechet_distance", &frechet_distance, py::arg("a"), py::arg("b"));

    m.def(
        "posterior_entropy", [](const Eigen::MatrixXd& pmf) { return posterior_entropy(pmf).per_sample; },
        py::arg("pmf"), "Per-row Shannon entropy in nats.");

    m.def("published_schemas", &published_schemas, "Schema name to JSON text.");

    py::class_<PyService>(m, "Service")
        .def(py::init<const std::string&, const std::string&>(), py::arg("checkpoint"), py::arg("catalog_manifest"))
        .def("handle", &PyService::handle, py::arg("method"), py::arg("path"),
             py::arg("query") = std::map<std::string, std::string>{}, py::arg("body") = "");
}
