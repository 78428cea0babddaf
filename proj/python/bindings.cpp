#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "litevla/bench.hpp"
#include "litevla/data_pipeline.hpp"
#include "litevla/policy.hpp"
#include "litevla/rng.hpp"
#include "litevla/runtime.hpp"
#include "litevla/sim.hpp"

namespace py = pybind11;
using namespace litevla;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    FloatArray out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

SceneImage image_from(const FloatArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("image must be an H x W x 3 float array");
    return SceneImage::from_unit_range(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                                       std::span<const float>(a.data(), static_cast<std::size_t>(a.size())));
}

FloatArray array_from(const SceneImage& img) {
    FloatArray out({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width), py::ssize_t{3}});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

py::dict memory_dict(const MemoryReport& m) {
    py::dict d;
    d["params"] = m.params;
    d["fp32_bytes"] = m.fp32_bytes;
    d["quantized_bytes"] = m.quantized_bytes;
    d["bits_per_parameter"] = m.bits_per_parameter;
    d["reduction_fraction"] = m.reduction_fraction;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "NF4 quantization, LoRA policy, action grammar and data pipeline bindings";

    py::register_exception<ActionParseError>(m, "ActionParseError", PyExc_ValueError);
    py::register_exception<SafetyError>(m, "SafetyError", PyExc_ValueError);
    py::register_exception<SyncError>(m, "SyncError", PyExc_ValueError);
    py::register_exception<SplitError>(m, "SplitError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<QuantizationError>(m, "QuantizationError", PyExc_ValueError);
    py::register_exception<InvariantError>(m, "InvariantError", PyExc_ValueError);

    m.def("nf4_codebook", [] {
        const auto& l = nf4_codebook().levels;
        return std::vector<float>(l.begin(), l.end());
    });

    py::class_<NF4QuantizedTensor>(m, "NF4Tensor")
        .def_property_readonly("shape", &NF4QuantizedTensor::shape)
        .def_property_readonly("block_size", &NF4QuantizedTensor::block_size)
        .def_property_readonly("double_quantized", &NF4QuantizedTensor::double_quantized)
        .def("codes",
             [](const NF4QuantizedTensor& q) {
                 std::vector<std::uint8_t> c(q.numel());
                 for (std::size_t i = 0; i < c.size(); ++i) c[i] = q.code(i);
                 return py::array_t<std::uint8_t>(static_cast<py::ssize_t>(c.size()), c.data());
             })
        .def("scales",
             [](const NF4QuantizedTensor& q) { return std::vector<float>(q.scales().begin(), q.scales().end()); })
        .def("dequantize", [](const NF4QuantizedTensor& q) { return array_from(dequantize_nf4(q)); })
        .def("matvec",
             [](const NF4QuantizedTensor& q, const FloatArray& x) { return array_from(matvec_nf4(q, tensor_from(x))); })
        .def("memory", [](const NF4QuantizedTensor& q) { return memory_dict(memory_footprint(q)); });

    m.def("quantize_nf4", [](const FloatArray& a, std::size_t block_size) { return quantize_nf4(tensor_from(a), block_size); },
          py::arg("values"), py::arg("block_size") = kDefaultBlockSize);
    m.def("double_quantize_scales", [](const NF4QuantizedTensor& q) { return double_quantize_scales(q).tensor; });

    m.def("parse_action", [](const std::string& s) {
        const ActionCommand c = parse_action(s);
        return py::make_tuple(std::string(verb_name(c.verb)), c.magnitude, c.duration);
    });
    m.def("serialize_action", [](const std::string& verb, double magnitude, double duration) {
        const auto v = verb_from_name(verb);
        if (!v) throw py::value_error("unknown verb '" + verb + "'");
        return serialize_action({*v, magnitude, duration});
    });
    m.def("to_velocity", [](const std::string& s) {
        const VelocityCommand v = to_velocity(parse_action(s));
        return py::make_tuple(v.linear, v.angular, v.duration);
    });

    m.def("synchronize",
          [](const std::vector<std::int64_t>& images, const std::vector<std::int64_t>& actions, std::int64_t tol) {
              const SyncResult r = synchronize(images, actions, tol);
              std::vector<std::tuple<std::size_t, std::size_t, std::int64_t>> out;
              for (const auto& mt : r.matches) out.emplace_back(mt.image_index, mt.action_index, mt.delta_ns);
              return py::make_tuple(out, r.dropped);
          },
          py::arg("image_ts"), py::arg("action_ts"), py::arg("tolerance_ns") = kDefaultSyncToleranceNs);
    m.def("velocity_to_class",
          [](double v, double w) { return std::string(verb_name(velocity_to_class(v, w))); });
    m.def("stratified_split", [](const std::vector<std::string>& labels, double ratio, std::uint64_t seed) {
        std::vector<Verb> vs;
        for (const auto& l : labels) {
            const auto v = verb_from_name(l);
            if (!v) throw py::value_error("unknown label '" + l + "'");
            vs.push_back(*v);
        }
        std::vector<std::string> out;
        for (Split s : stratified_split(vs, ratio, seed)) out.emplace_back(s == Split::Train ? "train" : "val");
        return out;
    }, py::arg("labels"), py::arg("ratio") = 0.85, py::arg("seed") = 0);

    m.def("render_scene",
          [](double x, double y, double theta, const std::string& world_json, std::size_t size) {
              const WorldSpec w = world_from_json(nlohmann::json::parse(world_json));
              return array_from(render_scene({x, y, theta, 0.0, 0.0}, w, CameraConfig{size, size}));
          },
          py::arg("x"), py::arg("y"), py::arg("theta"), py::arg("world_json") = "{}", py::arg("size") = 32);

    py::class_<Policy>(m, "Policy")
        .def_static("create", [](std::uint64_t seed) {
            PolicyConfig c;
            c.seed = seed;
            return Policy::create(c);
        }, py::arg("seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) { return Policy::from_checkpoint(load_checkpoint(p)); })
        .def("save", [](const Policy& p, const std::filesystem::path& path) { save_checkpoint(path, p.to_checkpoint()); })
        .def_property_readonly("precision", [](const Policy& p) { return precision_name(p.precision()); })
        .def("logits", [](const Policy& p, const FloatArray& img) { return p.act(image_from(img)).values; })
        .def("act", [](const Policy& p, const FloatArray& img) { return decode_action(p.act(image_from(img)), p.config()); })
        .def("quantize", [](const Policy& p, const std::string& mode, bool dq) {
            return quantize_policy(p, precision_from_name(mode), dq);
        }, py::arg("mode"), py::arg("double_quant") = false)
        .def("memory", [](const Policy& p) {
            const PolicyMemory mem = policy_memory(p);
            py::dict d;
            d["backbone"] = memory_dict(mem.backbone);
            d["whole"] = memory_dict(mem.whole);
            return d;
        });

    m.def("run_expert_episode", [](std::uint64_t seed, double duration) {
        Rng rng(seed);
        const WorldSpec w = random_world(rng);
        const RobotState start = random_start(w, rng);
        EpisodeOptions opts;
        opts.duration = duration;
        opts.latency = [](std::size_t) { return 0.0; };
        const EpisodeResult r = run_episode(w, start, expert_reasoner(w, PolicyConfig{}.action_table), RuntimeConfig{}, opts);
        py::dict d;
        d["success"] = r.success;
        d["elapsed"] = r.elapsed;
        d["emissions"] = r.emissions.size();
        return d;
    }, py::arg("seed") = 0, py::arg("duration") = 120.0);
}
