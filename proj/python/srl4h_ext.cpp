#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "srl4h/agent/ppo.hpp"
#include "srl4h/agent/returns.hpp"
#include "srl4h/cli/commands.hpp"
#include "srl4h/cli/config.hpp"
#include "srl4h/envs/config.hpp"
#include "srl4h/errors.hpp"
#include "srl4h/srl/srl.hpp"
#include "srl4h/trainer/trainer.hpp"

namespace py = pybind11;
using namespace srl4h;
using nlohmann::json;
using diff::Index;

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

// Configs cross the boundary as JSON text; the Python wrapper does the dict conversion.
cli::ExperimentConfig parse_config(const std::string& text) {
  const json doc = text.empty() ? json::object() : json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config: not valid JSON");
  return cli::from_json(doc);
}

py::dict step_dict(const envs::StepBatch& b) {
  py::dict d;
  d["policy_obs"] = MatF(b.policy_obs);
  d["privileged"] = MatF(b.privileged);
  d["reward"] = b.reward;
  d["terms"] = b.terms;
  d["done"] = std::vector<bool>(b.done.begin(), b.done.end());
  d["truncated"] = std::vector<bool>(b.truncated.begin(), b.truncated.end());
  return d;
}

class PyEnv {
 public:
  explicit PyEnv(const std::string& config_json) {
    const auto cfg = parse_config(config_json);
    env_ = envs::make_env(cfg.trainer.env);
  }
  py::dict reset(std::uint64_t seed) { return step_dict(env_->reset(seed)); }
  py::dict step(const MatF& actions) { return step_dict(env_->step(actions)); }
  Index num_envs() const { return env_->num_envs(); }
  py::dict spec() const {
    const auto& s = env_->spec();
    py::dict d;
    d["name"] = s.name;
    d["privileged_dim"] = s.privileged_dim;
    d["proprio_dim"] = s.proprio_dim();
    d["action_dim"] = s.action_dim;
    d["horizon"] = s.horizon;
    d["privileged_mask"] = s.privileged_mask();
    std::vector<std::string> names;
    std::vector<double> weights;
    for (const auto& t : s.reward_terms) {
      names.push_back(t.name);
      weights.push_back(t.weight);
    }
    d["term_names"] = names;
    d["term_weights"] = weights;
    return d;
  }

 private:
  std::unique_ptr<envs::VecEnv> env_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "srl4h core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);

  m.def("resolve_config", [](const std::string& text) { return cli::to_json(parse_config(text)).dump(); },
        py::arg("config_json") = "");

  py::class_<PyEnv>(m, "VecEnv")
      .def(py::init<const std::string&>(), py::arg("config_json") = "")
      .def("reset", &PyEnv::reset, py::arg("seed"))
      .def("step", &PyEnv::step, py::arg("actions"))
      .def_property_readonly("num_envs", &PyEnv::num_envs)
      .def_property_readonly("spec", &PyEnv::spec);

  m.def(
      "gae",
      [](const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
         const Eigen::VectorXd& bootstrap, double gamma, double lam) {
        const auto g = agent::gae(rewards, values, dones, bootstrap, gamma, lam);
        return py::make_tuple(g.advantages, g.returns);
      },
      py::arg("rewards"), py::arg("values"), py::arg("dones"), py::arg("bootstrap"), py::arg("gamma"), py::arg("lam"));
  m.def(
      "ppo_policy_loss",
      [](const Eigen::RowVectorXd& lp, const Eigen::RowVectorXd& old, const Eigen::RowVectorXd& adv, double clip) {
        return agent::ppo_policy_loss(lp, old, adv, clip);
      },
      py::arg("log_prob"), py::arg("old_log_prob"), py::arg("advantages"),
        py::arg("clip"));
  m.def("d_ncs", [](const Eigen::VectorXd& p, const Eigen::VectorXd& z) { return srl::d_ncs(p, z); }, py::arg("p"),
        py::arg("z"));
  m.def(
      "zero_masking",
      [](const Eigen::MatrixXd& s, const std::vector<Index>& mask) {
        return Eigen::MatrixXd(srl::zero_masking<double>(s, std::span<const Index>(mask)));
      },
      py::arg("states"), py::arg("mask"));
  m.def("srl_active", &trainer::srl_active, py::arg("iteration"), py::arg("interval"));

  py::class_<trainer::Trainer>(m, "Trainer")
      .def(py::init([](const std::string& text, const std::string& out_dir) {
             auto cfg = parse_config(text).trainer;
             cfg.out_dir = out_dir;
             return std::make_unique<trainer::Trainer>(cfg);
           }),
           py::arg("config_json") = "", py::arg("out_dir") = "")
      .def_property_readonly("iteration", &trainer::Trainer::iteration)
      .def_property_readonly("learning_rate", &trainer::Trainer::learning_rate)
      .def("train_iteration",
           [](trainer::Trainer& t) {
             const auto r = t.train_iteration();
             return r.to_json().dump();
           })
      .def("run",
           [](trainer::Trainer& t) {
             std::vector<std::string> out;
             for (const auto& r : t.run()) out.push_back(r.to_json().dump());
             return out;
           })
      .def("save_checkpoint", &trainer::Trainer::save_checkpoint, py::arg("path"))
      .def("load_checkpoint", &trainer::Trainer::load_checkpoint, py::arg("path"))
      .def(
          "act",
          [](const trainer::Trainer& t, const MatF& obs) { return MatF(agent::policy_forward(t.agent(), obs).mean); },
          py::arg("policy_obs"))
      .def(
          "value",
          [](const trainer::Trainer& t, const MatF& obs) { return MatF(agent::value_forward(t.agent(), obs)); },
          py::arg("obs"))
      .def(
          "evaluate",
          [](const trainer::Trainer& t, int episodes, std::uint64_t seed, bool deterministic) {
            return trainer::evaluate(t.agent(), t.config().env, episodes, seed, deterministic).to_json().dump();
          },
          py::arg("episodes"), py::arg("seed"), py::arg("deterministic") = true);

  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& ckpt, const std::string& text, int episodes, bool deterministic) {
        return trainer::evaluate_checkpoint(ckpt, parse_config(text).trainer, episodes, deterministic).to_json().dump();
      },
      py::arg("checkpoint"), py::arg("config_json"), py::arg("episodes"), py::arg("deterministic") = true);
  m.def(
      "evaluate_random",
      [](const std::string& text, int episodes, std::uint64_t seed) {
        return trainer::evaluate_random(parse_config(text).trainer.env, episodes, seed).to_json().dump();
      },
      py::arg("config_json"), py::arg("episodes"), py::arg("seed"));

  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "srl4h");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
