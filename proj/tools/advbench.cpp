// advbench: train desk-scale models, run adaptive attack campaigns in buggy
// or corrected projection mode, audit the written images, dump figures.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advbench/campaign.hpp"
#include "advbench/data.hpp"

namespace fs = std::filesystem;
using namespace advbench;

namespace {

struct AttackFlags {
  std::string manifest;
  std::string checkpoint, dataset, variant = "cifar10", out, mode = "corrected", epsilon = "8/255", step_size;
  std::size_t num_rounds = 20, bs = 32, pgd_steps = 40, num_eot = 10, limit = 0, jobs = 1;
  int eot_shift = 2;
  std::uint64_t seed = 0;
  bool force_reattack = false, random_start = false, quantize_audit = false, resume = false, no_png = false;
};

// Flags given on the command line override the manifest.
CampaignManifest resolve(const AttackFlags& f, const CLI::App& cmd) {
  CampaignManifest m = f.manifest.empty() ? CampaignManifest{} : CampaignManifest::load(f.manifest);
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--checkpoint")) m.checkpoint = f.checkpoint;
  if (given("--dataset")) m.dataset = f.dataset;
  if (given("--variant")) m.variant = parse_variant(f.variant);
  if (given("--out")) m.output_dir = f.out;
  if (given("--limit")) m.limit = f.limit;
  if (given("--mode")) m.adaptive.mode = parse_mode(f.mode);
  if (given("--num-rounds")) m.adaptive.num_rounds = f.num_rounds;
  if (given("--bs")) m.adaptive.batch_size = f.bs;
  if (given("--force-reattack")) m.adaptive.force_reattack = f.force_reattack;
  AttackConfig& a = m.adaptive.inner;
  if (given("--epsilon")) {
    a.epsilon = static_cast<float>(parse_fraction(f.epsilon));
    if (!given("--step-size")) a.step_size = a.epsilon > 0.0f ? a.epsilon / 4.0f : 1.0f / 1020.0f;
  }
  if (given("--step-size")) a.step_size = static_cast<float>(parse_fraction(f.step_size));
  if (given("--pgd-steps")) a.num_steps = f.pgd_steps;
  if (given("--num-eot")) a.num_eot = f.num_eot;
  if (given("--eot-shift")) a.eot_max_shift = f.eot_shift;
  if (given("--seed")) a.seed = f.seed;
  if (given("--random-start")) a.random_start = f.random_start;
  if (given("--quantize-audit")) m.audit.quantize_8bit = f.quantize_audit;
  if (given("--no-png")) m.write_png = false;
  m.adaptive.jobs = f.jobs;
  m.adaptive.validate();
  if (m.checkpoint.empty() || m.dataset.empty() || m.output_dir.empty()) {
    throw std::invalid_argument("attack needs --checkpoint, --dataset and --out (or a manifest providing them)");
  }
  return m;
}

std::vector<std::size_t> parse_ids(const std::string& text) {
  std::vector<std::size_t> ids;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string tok = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) ids.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (ids.empty()) throw std::invalid_argument("no sample ids given");
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness harness for multi-resolution self-ensembles"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic blob dataset in CIFAR-10 layout");
  std::string synth_out;
  int synth_classes = 10;
  std::size_t synth_per_class = 200, synth_side = 32;
  std::uint64_t synth_seed = 0;
  SynthOptions synth_opts;
  synth->add_option("--out", synth_out, "Output file")->required();
  synth->add_option("--classes", synth_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", synth_per_class, "Samples per class")->capture_default_str();
  synth->add_option("--side", synth_side, "Image side length")->capture_default_str();
  synth->add_option("--seed", synth_seed, "RNG seed")->capture_default_str();
  synth->add_option("--noise", synth_opts.noise, "Per-pixel noise std")->capture_default_str();
  synth->add_option("--amplitude", synth_opts.amplitude, "Blob contrast")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train an ensemble or plain classifier");
  std::string model_config, train_dataset, train_variant = "cifar10", checkpoint_out;
  TrainRequest treq;
  train_cmd->add_option("--model-config", model_config, "Model architecture JSON (default: built-in ensemble)");
  train_cmd->add_option("--dataset", train_dataset, "Dataset in CIFAR binary layout")->required();
  train_cmd->add_option("--variant", train_variant, "cifar10 | cifar100")->capture_default_str();
  train_cmd->add_option("--out", checkpoint_out, "Checkpoint path")->required();
  train_cmd->add_option("--epochs", treq.train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", treq.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch-size", treq.train.batch_size)->capture_default_str();
  train_cmd->add_option("--seed", treq.train.seed, "Shuffle seed")->capture_default_str();
  train_cmd->add_option("--init-seed", treq.init_seed, "Parameter init seed")->capture_default_str();
  train_cmd->add_option("--jobs", treq.train.jobs)->capture_default_str();

  // attack
  auto* attack = app.add_subcommand("attack", "Run a multi-round adaptive attack campaign");
  AttackFlags af;
  attack->add_option("--manifest", af.manifest, "Campaign manifest JSON");
  attack->add_option("--checkpoint", af.checkpoint);
  attack->add_option("--dataset", af.dataset);
  attack->add_option("--variant", af.variant)->capture_default_str();
  attack->add_option("--out", af.out, "Output directory");
  attack->add_option("--mode", af.mode, "buggy | corrected")->capture_default_str();
  attack->add_option("--num-rounds", af.num_rounds)->capture_default_str();
  attack->add_option("--bs", af.bs, "Batch size")->capture_default_str();
  attack->add_option("--epsilon", af.epsilon, "L-inf budget, e.g. 8/255")->capture_default_str();
  attack->add_option("--step-size", af.step_size, "PGD step (default epsilon/4)");
  attack->add_option("--pgd-steps", af.pgd_steps)->capture_default_str();
  attack->add_option("--num-eot", af.num_eot)->capture_default_str();
  attack->add_option("--eot-shift", af.eot_shift, "Max EOT pixel shift")->capture_default_str();
  attack->add_option("--seed", af.seed)->capture_default_str();
  attack->add_option("--limit", af.limit, "Attack only the first N samples");
  attack->add_option("--jobs", af.jobs, "Worker threads")->capture_default_str();
  attack->add_flag("--force-reattack", af.force_reattack, "Re-attack every sample every round");
  attack->add_flag("--random-start", af.random_start);
  attack->add_flag("--quantize-audit", af.quantize_audit, "Quantize to 8 bits before auditing");
  attack->add_flag("--resume", af.resume, "Continue from the last complete round");
  attack->add_flag("--no-png", af.no_png, "Skip PNG copies of the images");

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "Recompute perturbation norms from image files");
  std::string images_dir, audit_eps = "8/255", audit_report;
  AuditOptions aopts;
  audit_cmd->add_option("--images-dir", images_dir, "Campaign images directory")->required();
  audit_cmd->add_option("--epsilon", audit_eps)->capture_default_str();
  audit_cmd->add_option("--tolerance-ulps", aopts.tolerance_ulps)->capture_default_str();
  audit_cmd->add_flag("--quantize", aopts.quantize_8bit, "Quantize to 8 bits before measuring");
  audit_cmd->add_option("--report", audit_report, "Write a JSON summary here");

  // dump
  auto* dump = app.add_subcommand("dump", "Write original / adversarial / amplified difference PNGs");
  DumpRequest dreq;
  std::string dump_campaign, dump_ids, dump_out;
  std::size_t dump_round = 0;
  dump->add_option("--campaign", dump_campaign, "Campaign output directory")->required();
  dump->add_option("--samples", dump_ids, "Comma-separated sample ids")->required();
  dump->add_option("--amplification", dreq.amplification)->capture_default_str();
  dump->add_option("--round", dump_round, "Round to show (default: last)");
  dump->add_option("--out", dump_out, "Output directory (default: <campaign>/figures)");

  // fixture
  auto* fixture = app.add_subcommand("fixture", "Write the saturating linear fixture and its campaign manifest");
  FixtureRequest freq;
  std::string fixture_out, fixture_mode = "buggy";
  fixture->add_option("--out", fixture_out)->required();
  fixture->add_option("--samples", freq.samples)->capture_default_str();
  fixture->add_option("--side", freq.side)->capture_default_str();
  fixture->add_option("--rounds", freq.rounds)->capture_default_str();
  fixture->add_option("--seed", freq.seed)->capture_default_str();
  fixture->add_option("--mode", fixture_mode)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      save_cifar(synth_out, synth_blobs(synth_classes, synth_per_class, synth_side, synth_seed, synth_opts),
                 CifarVariant::Cifar10);
      std::cout << "wrote " << synth_out << "\n";
    } else if (*train_cmd) {
      if (!fs::exists(train_dataset)) {
        std::cerr << "error: dataset not found: " << train_dataset << "\n";
        return 1;
      }
      treq.model = model_config.empty() ? ModelConfig{} : ModelConfig::load(model_config);
      treq.dataset = train_dataset;
      treq.variant = parse_variant(train_variant);
      treq.checkpoint = checkpoint_out;
      const auto s = run_train(treq, std::cout);
      std::cout << "checkpoint sha256 " << s.checkpoint_digest << "\n";
    } else if (*attack) {
      const CampaignManifest m = resolve(af, *attack);
      const auto s = run_attack(m, af.resume, std::cout);
      if (!s.ledger_matches_audit) std::cerr << "warning: campaign ledger disagrees with the file audit\n";
    } else if (*audit_cmd) {
      aopts.epsilon = parse_fraction(audit_eps);
      const auto s = run_audit(images_dir, aopts,
                               audit_report.empty() ? std::nullopt : std::optional<fs::path>(audit_report), std::cout);
      return s.exit_code;
    } else if (*dump) {
      dreq.campaign_dir = dump_campaign;
      dreq.samples = parse_ids(dump_ids);
      if (dump->count("--round")) dreq.round = dump_round;
      dreq.out_dir = dump_out;
      for (const auto& p : run_dump(dreq)) std::cout << p.string() << "\n";
    } else if (*fixture) {
      freq.out_dir = fixture_out;
      freq.mode = parse_mode(fixture_mode);
      std::cout << make_fixture(freq).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
