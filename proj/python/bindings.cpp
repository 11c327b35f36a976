#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "trrsim/gf2.hpp"
#include "trrsim/mapping_probe.hpp"
#include "trrsim/scenario.hpp"

namespace py = pybind11;
using namespace trrsim;

namespace {

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["sim_ns"] = s.sim_ns;
  d["rsvd_faults"] = s.rsvd_faults;
  d["refreshes"] = s.refreshes;
  d["leak_events"] = s.leak_events;
  d["pt_nodes"] = s.pt_nodes;
  d["adj_nodes"] = s.adj_nodes;
  d["ring_capacity"] = s.ring_capacity;
  d["flips_pt"] = s.flips_pt;
  d["flips_other"] = s.flips_other;
  return d;
}

py::dict probe(std::size_t samples, std::uint64_t seed, double noise, const ScenarioConfig& cfg) {
  Dram dram(cfg.sim.dram);
  Clock clock;
  ProbeOptions po;
  po.seed = seed;
  po.noise_sigma = noise;
  MappingProbe p(dram, clock, po);
  const ProbeResult r =
      p.recover_bank_functions(samples, {6, cfg.sim.dram.row_shift + cfg.sim.dram.row_bits - 1});
  py::dict d;
  d["masks"] = r.masks;
  d["complete"] = r.complete;
  d["samples"] = r.samples;
  d["clusters"] = r.clusters;
  d["matches_config"] = gf2::same_span(r.masks, cfg.sim.dram.bank_fns);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "rowhammer page-table defense simulator";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ScenarioError>(m, "ScenarioError", PyExc_RuntimeError);
  py::register_exception<InvariantError>(m, "InvariantError", PyExc_AssertionError);

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init<>())
      .def_static("from_text", &parse_scenario_config_text, py::arg("text"))
      .def_static("from_file", &load_scenario_config, py::arg("path"))
      .def("validate", &ScenarioConfig::validate)
      .def("render", &render_scenario_config)
      .def("__str__", &render_scenario_config)
      .def_property(
          "defense", [](const ScenarioConfig& c) { return std::string(defense_name(c.sim.defense)); },
          [](ScenarioConfig& c, const std::string& s) { c.sim.defense = parse_defense(s); })
      .def_property(
          "scenario", [](const ScenarioConfig& c) { return c.attack.scenario; },
          [](ScenarioConfig& c, const std::string& s) { c.attack.scenario = s; })
      .def_property(
          "m", [](const ScenarioConfig& c) { return c.attack.m; },
          [](ScenarioConfig& c, std::size_t v) { c.attack.m = v; })
      .def_property(
          "duration_ns", [](const ScenarioConfig& c) { return c.attack.duration; },
          [](ScenarioConfig& c, Nanos v) { c.attack.duration = v; })
      .def_property(
          "seed", [](const ScenarioConfig& c) { return c.attack.seed; },
          [](ScenarioConfig& c, std::uint64_t v) { c.attack.seed = v; })
      .def_property(
          "format", [](const ScenarioConfig& c) { return c.output.format; },
          [](ScenarioConfig& c, const std::string& v) { c.output.format = v; })
      .def_property_readonly("bank_fns", [](const ScenarioConfig& c) { return c.sim.dram.bank_fns; });

  py::class_<RunReport>(m, "RunReport")
      .def_readonly("scenario", &RunReport::scenario)
      .def_readonly("defense", &RunReport::defense)
      .def_readonly("flips_total", &RunReport::flips_total)
      .def_readonly("flips_in_pt_rows", &RunReport::flips_in_pt_rows)
      .def_readonly("corrupted_ptes", &RunReport::corrupted_ptes)
      .def_readonly("rsvd_faults", &RunReport::rsvd_faults)
      .def_readonly("refreshes", &RunReport::refreshes)
      .def_readonly("leak_events", &RunReport::leak_events)
      .def_readonly("armed_ptes", &RunReport::armed_ptes)
      .def_readonly("iterations", &RunReport::iterations)
      .def_readonly("sim_ns", &RunReport::sim_ns)
      .def_readonly("max_unrefreshed_hammer_ns", &RunReport::max_unrefreshed_hammer_ns)
      .def_readonly("wall_time", &RunReport::wall_time)
      .def_property_readonly("samples",
                             [](const RunReport& r) {
                               py::list out;
                               for (const Sample& s : r.samples) out.append(sample_dict(s));
                               return out;
                             })
      .def("metrics", &render_metrics, py::arg("format") = "csv")
      .def("write_metrics", &emit_metrics, py::arg("path"), py::arg("format") = "csv");

  m.attr("METRIC_COLUMNS") = kMetricColumns;

  m.def(
      "run", [](const ScenarioConfig& cfg) {
        cfg.validate();
        py::gil_scoped_release unlocked;
        return run_scenario(cfg);
      },
      py::arg("config"));

  m.def(
      "map_address",
      [](PhysAddr pa, const ScenarioConfig& cfg) {
        const DramAddress a = Dram(cfg.sim.dram).map_address(pa);
        return py::make_tuple(a.bank, a.row, a.column);
      },
      py::arg("pa"), py::arg("config") = ScenarioConfig{});

  m.def("probe_mapping", &probe, py::arg("samples") = 10000, py::arg("seed") = 1, py::arg("noise") = 0.0,
        py::arg("config") = ScenarioConfig{});
}
