#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "physadv/harness.hpp"

namespace physadv::harness {

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config (INI); defaults apply when omitted");
  cmd->add_option("--seed", o.seed, "overrides [run] seed");
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--jobs", o.jobs, "worker threads across targets")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) cfg.set_seed(*o.seed);
  if (o.jobs) cfg.jobs = *o.jobs;
  cfg.validate();
  return cfg;
}

void print_table(const std::vector<ReportRow>& rows) {
  std::cout << fmt::format("{:<16}{:>9}{:>12}{:>11}{:>10}{:>14}\n", "variant", "targets", "applicable", "successes",
                           "rate %", "mean p");
  for (const ReportRow& r : rows) {
    std::cout << fmt::format("{:<16}{:>9}{:>12}{:>11}{:>10.2f}{:>14}\n", variant_name(r.variant), r.targets,
                             r.summary.applicable, r.summary.successes, r.summary.success_rate,
                             r.summary.mean_perceptibility ? fmt::format("{:.4e}", *r.summary.mean_perceptibility)
                                                           : "-");
  }
}

}  // namespace

int cli(int argc, const char* const* argv) {
  CLI::App app{"Adversarial attacks beyond the image space on a desk-scale render-and-classify pipeline"};
  app.name("physadv");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOptions opts;
  std::optional<std::string> track_opt;
  std::string variant_opt;
  std::optional<std::string> target_opt;

  CLI::App* gen = app.add_subcommand("gen-data", "render the two-track dataset and its manifest");
  CLI::App* train = app.add_subcommand("train", "train one classifier per track");
  train->add_option("--track", track_opt, "diff or scene; both when omitted");
  CLI::App* targets = app.add_subcommand("targets", "select top-confidence correct test items per class");
  CLI::App* atk = app.add_subcommand("attack", "run one attack variant over its target set");
  atk->add_option("--variant", variant_opt, "image, surface_normal, illumination, material, combined, "
                                            "scene_image or scene_zoo")
      ->required();
  atk->add_option("--target", target_opt, "single target id");
  CLI::App* campaign = app.add_subcommand("campaign", "dataset, training, targets, attacks, analyses and report");
  CLI::App* diag = app.add_subcommand("diagnose-subsets", "16-subset tables for successful ZOO attacks");
  CLI::App* recon = app.add_subcommand("reconstruct", "fit physical explanations of image-space adversaries");
  CLI::App* defend = app.add_subcommand("defend", "re-render defense on image-space adversaries");
  CLI::App* report = app.add_subcommand("report", "success table and mean attack curves");
  for (CLI::App* cmd : {gen, train, targets, atk, campaign, diag, recon, defend, report}) add_common(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  ExperimentConfig cfg;
  std::optional<Track> track;
  std::optional<Variant> variant;
  try {
    cfg = resolve(opts);
    if (track_opt) track = parse_track(*track_opt);
    if (atk->parsed()) variant = parse_variant(variant_opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  const Layout out{opts.out};
  try {
    if (gen->parsed()) step_gen_data(cfg, out);
    if (train->parsed()) step_train(cfg, out, track);
    if (targets->parsed()) step_targets(cfg, out);
    if (atk->parsed()) step_attack(cfg, out, *variant, target_opt);
    if (diag->parsed()) step_diagnose_subsets(cfg, out);
    if (recon->parsed()) step_reconstruct(cfg, out);
    if (defend->parsed()) step_defend(cfg, out);
    if (report->parsed()) print_table(step_report(cfg, out));
    if (campaign->parsed()) print_table(run_campaign(cfg, out));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace physadv::harness
