#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ase/commands.hpp"
#include "ase/errors.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> preset;
  std::optional<int> threads;
  std::vector<std::string> set;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Config file (key = value lines)");
  app->add_option("--seed", f.seed, "Master seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--preset", f.preset, "Default values: desk or paper");
  app->add_option("--threads", f.threads, "Worker thread cap (results do not depend on it)");
  app->add_option("--set", f.set, "Override one config key, as key=value");
}

ase::cli::RunConfig resolve(const CommonFlags& f) {
  ase::cli::RunConfig c = f.config.empty() ? ase::cli::parse_config("", f.preset)
                                           : ase::cli::load_config(f.config, f.preset);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ase::UsageError("--set expects key=value, got '" + kv + "'");
    ase::cli::set_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.threads) c.threads = *f.threads;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial skill embeddings on a planar character"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* gen = app.add_subcommand("gen-data", "Synthesize the motion dataset");
  add_common(gen, flags);

  std::string resume;
  auto* pre = app.add_subcommand("pretrain", "Pre-train the low-level policy, discriminator and encoder");
  add_common(pre, flags);
  pre->add_option("--resume", resume, "Continue from this checkpoint");

  std::string llp;
  std::string task;
  auto* train = app.add_subcommand("train-task", "Train a high-level policy on a frozen low-level policy");
  add_common(train, flags);
  train->add_option("--llp", llp, "Low-level policy checkpoint")->required();
  train->add_option("--task", task, "reach, speed, steering, location or strike");

  ase::cli::RolloutOptions ro;
  std::string hlp;
  std::vector<double> fixed_latent;
  std::optional<int> steps;
  auto* roll = app.add_subcommand("rollout", "Dump per-step trajectories to rollout.csv");
  add_common(roll, flags);
  roll->add_option("--llp", llp, "Low-level policy checkpoint")->required();
  auto* hlp_opt = roll->add_option("--hlp", hlp, "High-level policy checkpoint (task mode)");
  roll->add_option("--latent", fixed_latent, "Fixed latent components (normalized)")
      ->delimiter(',')
      ->excludes(hlp_opt);
  roll->add_option("-n,--episodes", ro.episodes, "Episodes");
  roll->add_option("--steps", steps, "Steps per episode (default task.episode_length)");

  std::vector<CLI::App*> evals;
  for (const char* name : {"eval-coverage", "eval-transitions", "eval-recovery"}) {
    auto* e = app.add_subcommand(name, "Evaluate a low-level policy");
    add_common(e, flags);
    e->add_option("--llp", llp, "Low-level policy checkpoint")->required();
    evals.push_back(e);
  }

  int instances = 20;
  bool inject_nan = false;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every loss gradient");
  add_common(grad, flags);
  grad->add_option("--instances", instances, "Random instances per loss family");
  grad->add_flag("--inject-nan", inject_nan, "Poison parameters with NaN; every family must fail");

  CLI11_PARSE(app, argc, argv);

  try {
    ase::cli::RunConfig config = resolve(flags);
    if (gen->parsed()) {
      const auto ds = ase::cli::gen_data(config);
      std::cout << "wrote " << ds.clips.size() << " clips to " << config.out << "/dataset.json\n";
    } else if (pre->parsed()) {
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) from = resume;
      const auto rows = ase::cli::pretrain_command(config, from);
      std::cout << "trained " << rows.size() << " iterations; wrote " << config.out << "/llp.ckpt\n";
    } else if (train->parsed()) {
      if (!task.empty()) config.task.task = ase::env::task_from_string(task);
      const auto rows = ase::cli::train_task_command(config, llp);
      std::cout << "trained " << rows.size() << " iterations; wrote " << config.out << "/hlp.ckpt\n";
    } else if (roll->parsed()) {
      ro.llp = llp;
      if (!hlp.empty()) ro.hlp = hlp;
      if (!fixed_latent.empty()) ro.latent = fixed_latent;
      ro.steps = steps.value_or(config.task.episode_length);
      ase::cli::rollout_command(config, ro);
      std::cout << "wrote " << config.out << "/rollout.csv\n";
    } else if (evals[0]->parsed()) {
      std::cout << ase::cli::eval_coverage_command(config, llp) << '\n';
    } else if (evals[1]->parsed()) {
      std::cout << ase::cli::eval_transitions_command(config, llp) << '\n';
    } else if (evals[2]->parsed()) {
      std::cout << ase::cli::eval_recovery_command(config, llp) << '\n';
    } else if (grad->parsed()) {
      return ase::cli::grad_check_command(instances, config.seed, inject_nan, std::cout) ? 0 : 1;
    }
  } catch (const ase::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ase::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
