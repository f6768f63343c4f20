#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "nvc/config.hpp"
#include "nvc/data.hpp"
#include "nvc/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string mode;
  int64_t anchors = -1;
  int64_t seed = -1;
};

nvc::TrainConfig resolve_config(const CommonFlags& flags) {
  nvc::TrainConfig cfg;
  if (!flags.config_path.empty()) cfg = nvc::load_config_file(flags.config_path);
  if (!flags.mode.empty()) cfg.mode = nvc::parse_mode(flags.mode);
  if (flags.anchors >= 0) cfg.anchors = flags.anchors;
  if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
  if (cfg.mode == nvc::TrainMode::kVae && cfg.anchors > 0 &&
      (!flags.mode.empty() || flags.anchors > 0))
    std::cerr << "warning: mode vae ignores --anchors " << cfg.anchors << "\n";
  cfg.validate();
  return cfg;
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

int cmd_train(const CommonFlags& flags) {
  nvc::TrainConfig cfg = resolve_config(flags);
  const nvc::DataDir data = nvc::load_data_dir(flags.data_dir);
  cfg.input_dim = data.train.input_dim;

  fs::create_directories(flags.out_dir);
  std::ofstream metrics(fs::path(flags.out_dir) / "metrics.csv",
                        std::ios::trunc);
  metrics << nvc::MetricsRecord::kCsvHeader << "\n";

  nvc::Trainer trainer(cfg, data.train.kind);
  {
    std::ofstream cfg_out(fs::path(flags.out_dir) / "config.txt", std::ios::trunc);
    cfg_out << nvc::serialize_config(trainer.config());
  }

  nvc::TrainHooks hooks;
  hooks.on_record = [&metrics](const nvc::MetricsRecord& rec) {
    metrics << rec.csv_row() << "\n";
    metrics.flush();
  };
  hooks.on_epoch_end = [&trainer, &flags](int64_t) {
    nvc::save_checkpoint(fs::path(flags.out_dir) / "last.ckpt",
                         trainer.to_checkpoint());
  };
  trainer.run(data.train, hooks);
  nvc::save_checkpoint(fs::path(flags.out_dir) / "final.ckpt",
                       trainer.to_checkpoint());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& csv_path) {
  nvc::Trainer trainer =
      nvc::Trainer::from_checkpoint(nvc::load_checkpoint(checkpoint_path));
  const nvc::DataDir data = nvc::load_data_dir(data_dir);
  const nvc::EvalReport report =
      nvc::evaluate(trainer.model(),
                    trainer.has_anchors() ? &trainer.anchors() : nullptr, data,
                    trainer.config().eval_epsilon);

  std::cout << "rel=" << format_metric(report.recon.rel) << "\n";
  std::cout << "delta1=" << format_metric(report.recon.delta1) << "\n";
  std::cout << "delta2=" << format_metric(report.recon.delta2) << "\n";
  std::cout << "delta3=" << format_metric(report.recon.delta3) << "\n";
  if (report.has_anchor_accuracy)
    std::cout << "anchor_accuracy=" << format_metric(report.anchor_accuracy)
              << "\n";
  std::cout << "covariance_offdiag_mean_abs="
            << format_metric(report.covariance_offdiag_mean_abs) << "\n";

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "rel,delta1,delta2,delta3,anchor_accuracy,covariance_offdiag_mean_"
           "abs\n";
    csv << format_metric(report.recon.rel) << ","
        << format_metric(report.recon.delta1) << ","
        << format_metric(report.recon.delta2) << ","
        << format_metric(report.recon.delta3) << ",";
    if (report.has_anchor_accuracy) csv << format_metric(report.anchor_accuracy);
    csv << "," << format_metric(report.covariance_offdiag_mean_abs) << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& anchors_list,
              const std::string& modes_list) {
  nvc::TrainConfig base = resolve_config(flags);
  const nvc::DataDir data = nvc::load_data_dir(flags.data_dir);

  std::vector<int64_t> counts;
  {
    std::set<int64_t> seen;
    for (int64_t m : nvc::detail::parse_int_list("anchors", anchors_list)) {
      if (m < 1) throw nvc::ConfigError("sweep anchor counts must be >= 1");
      if (!seen.insert(m).second) {
        std::cerr << "warning: duplicate anchor count " << m << " ignored\n";
        continue;
      }
      counts.push_back(m);
    }
  }
  std::vector<nvc::TrainMode> modes;
  {
    std::stringstream ss(modes_list);
    std::string part;
    while (std::getline(ss, part, ','))
      modes.push_back(nvc::parse_mode(nvc::detail::trim(part)));
    if (modes.empty()) throw nvc::ConfigError("sweep needs at least one mode");
  }

  fs::create_directories(flags.out_dir);
  std::ofstream csv(fs::path(flags.out_dir) / "sweep.csv", std::ios::trunc);
  csv << "mode,anchors,rel,delta1,delta2,delta3,accuracy\n";

  int64_t ok_cells = 0;
  auto on_row = [&csv, &ok_cells](const nvc::SweepRow& row) {
    csv << row.mode << "," << row.anchors << ",";
    if (row.ok) {
      csv << format_metric(row.report.recon.rel) << ","
          << format_metric(row.report.recon.delta1) << ","
          << format_metric(row.report.recon.delta2) << ","
          << format_metric(row.report.recon.delta3) << ",";
      if (row.report.has_anchor_accuracy)
        csv << format_metric(row.report.anchor_accuracy);
      ++ok_cells;
    } else {
      std::cerr << "sweep cell (" << row.mode << ", " << row.anchors
                << ") failed: " << row.error << "\n";
      csv << ",,,,";
    }
    csv << "\n";
    csv.flush();
  };
  nvc::anchor_sweep(base, modes, counts, data, on_row);
  return ok_cells > 0 ? 0 : kExitNumeric;
}

int cmd_export_latents(const std::string& checkpoint_path,
                       const std::string& data_dir, const std::string& out_csv) {
  nvc::Trainer trainer =
      nvc::Trainer::from_checkpoint(nvc::load_checkpoint(checkpoint_path));
  const nvc::DataDir data = nvc::load_data_dir(data_dir);
  const int64_t d = trainer.config().latent_dim;
  const auto latents = nvc::encode_eval(trainer.model(), data.test);

  std::vector<int64_t> assigned(static_cast<size_t>(data.test.n), -1);
  if (trainer.has_anchors()) {
    const nvc::Assignment a = nvc::detail::assign_latents(
        latents, data.test.n, d, trainer.anchors());
    assigned = a.labels;
  }

  std::ofstream csv(out_csv, std::ios::trunc);
  csv << "sample_index,true_label,assigned_anchor";
  for (int64_t k = 0; k < d; ++k) csv << ",z_" << k;
  csv << "\n";
  for (int64_t i = 0; i < data.test.n; ++i) {
    csv << i << ","
        << (data.test.has_labels() ? data.test.labels[static_cast<size_t>(i)] : -1)
        << "," << assigned[static_cast<size_t>(i)];
    for (int64_t k = 0; k < d; ++k)
      csv << "," << format_metric(latents[static_cast<size_t>(i * d + k)]);
    csv << "\n";
  }
  // Anchor rows are flagged by sample_index -1; assigned_anchor carries the
  // anchor's own index.
  if (trainer.has_anchors()) {
    const auto av = trainer.anchors().anchors.data();
    for (int64_t j = 0; j < trainer.anchors().count(); ++j) {
      csv << -1 << "," << -1 << "," << j;
      for (int64_t k = 0; k < d; ++k)
        csv << "," << format_metric(av[static_cast<size_t>(j * d + k)]);
      csv << "\n";
    }
  }
  return 0;
}

int cmd_gen_synth(int64_t clusters, int64_t per_cluster, int64_t dim,
                  double spread, int64_t seed, const std::string& out_dir) {
  const uint64_t s = static_cast<uint64_t>(seed);
  const nvc::Dataset train =
      nvc::gen_synthetic(clusters, per_cluster, dim, spread, s);
  // Held-out split: same centers, disjoint noise stream.
  const int64_t test_per = std::max<int64_t>(1, per_cluster / 4);
  const nvc::Dataset test =
      nvc::gen_synthetic(clusters, test_per, dim, spread, s, 1);

  fs::create_directories(out_dir);
  nvc::write_dataset(fs::path(out_dir) / "synth_train.nvct", train);
  nvc::write_dataset(fs::path(out_dir) / "synth_test.nvct", test);
  std::cout << "wrote " << train.n << " train / " << test.n
            << " test samples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nebula variational coding trainer"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", train_flags.config_path, "config file");
  train->add_option("--data-dir", train_flags.data_dir, "dataset directory")
      ->required();
  train->add_option("--out", train_flags.out_dir, "output directory")->required();
  train->add_option("--mode", train_flags.mode, "vae|nvc|nvc_ml|nvc_no_mass");
  train->add_option("--anchors", train_flags.anchors, "anchor count");
  train->add_option("--seed", train_flags.seed, "seed override");

  std::string eval_ckpt, eval_data, eval_csv;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data-dir", eval_data, "dataset directory")->required();
  eval->add_option("--csv", eval_csv, "also write metrics to this CSV");

  CommonFlags sweep_flags;
  std::string sweep_anchors = "5,10,20";
  std::string sweep_modes = "nvc";
  auto* sweep = app.add_subcommand("sweep", "anchor-count sweep");
  sweep->add_option("--config", sweep_flags.config_path, "config file");
  sweep->add_option("--data-dir", sweep_flags.data_dir, "dataset directory")
      ->required();
  sweep->add_option("--out", sweep_flags.out_dir, "output directory")->required();
  sweep->add_option("--anchors", sweep_anchors, "comma-separated anchor counts");
  sweep->add_option("--modes", sweep_modes, "comma-separated modes");
  sweep->add_option("--seed", sweep_flags.seed, "seed override");

  std::string exp_ckpt, exp_data, exp_out;
  auto* exp = app.add_subcommand("export-latents", "export test-set latents");
  exp->add_option("--checkpoint", exp_ckpt, "checkpoint path")->required();
  exp->add_option("--data-dir", exp_data, "dataset directory")->required();
  exp->add_option("--out", exp_out, "output CSV path")->required();

  int64_t gs_clusters = 4, gs_per = 100, gs_dim = 8, gs_seed = 0;
  double gs_spread = 0.1;
  std::string gs_out;
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  gen->add_option("--clusters", gs_clusters, "cluster count");
  gen->add_option("--per-cluster", gs_per, "samples per cluster");
  gen->add_option("--dim", gs_dim, "sample dimension");
  gen->add_option("--spread", gs_spread, "within-cluster stddev");
  gen->add_option("--seed", gs_seed, "generation seed");
  gen->add_option("--out", gs_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_csv);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, sweep_anchors, sweep_modes);
    if (exp->parsed()) return cmd_export_latents(exp_ckpt, exp_data, exp_out);
    if (gen->parsed())
      return cmd_gen_synth(gs_clusters, gs_per, gs_dim, gs_spread, gs_seed, gs_out);
  } catch (const nvc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nvc::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nvc::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const nvc::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
