#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gads/commands.hpp"
#include "gads/error.hpp"

namespace {

std::vector<std::uint32_t> parse_layers(const std::string& text) {
  std::vector<std::uint32_t> layers;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size() || v > 0xffffffffUL) throw std::invalid_argument(item);
      layers.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::exception&) {
      throw gads::ArgumentError("--layers: not a layer index: '" + item + "'");
    }
  }
  return layers;
}

void add_hyper_flags(CLI::App* cmd, gads::cli::RunConfig& cfg, std::string& layers) {
  cmd->add_option("--alpha", cfg.train.alpha, "image-score fusion weight")->capture_default_str();
  cmd->add_option("--beta", cfg.train.beta, "pixel-map fusion weight")->capture_default_str();
  cmd->add_option("--tau", cfg.train.tau, "softmax temperature")->capture_default_str();
  cmd->add_option("--layers", layers, "comma-separated layer indices (default: all)");
}

}  // namespace

int main(int argc, char** argv) {
  gads::cli::RunConfig cfg;
  std::string layers;
  std::vector<std::uint64_t> seeds;

  CLI::App app{"gads: few-shot generalist anomaly detection on precomputed features"};
  app.require_subcommand(1);

  const std::map<std::string, gads::cli::MapFormat> formats{{"pgm", gads::cli::MapFormat::pgm},
                                                            {"png", gads::cli::MapFormat::png}};
  const std::map<std::string, gads::cli::BankScope> scopes{{"class", gads::cli::BankScope::per_class},
                                                           {"all", gads::cli::BankScope::whole_set}};
  const std::map<std::string, gads::GradMode> grad_modes{{"analytic", gads::GradMode::analytic},
                                                         {"check", gads::GradMode::finite_diff_check}};

  auto* train = app.add_subcommand("train", "train the adapters and write a checkpoint");
  train->add_option("--features", cfg.features, "training feature container")->required();
  train->add_option("--protos", cfg.protos, "text prototype file")->required();
  train->add_option("--ckpt", cfg.ckpt, "checkpoint to write")->required();
  train->add_option("--epochs", cfg.train.epochs)->capture_default_str();
  train->add_option("--lr", cfg.train.lr)->capture_default_str();
  train->add_option("--batch", cfg.train.batch)->capture_default_str();
  train->add_option("--shots", cfg.train.shots, "prompts per training episode")->capture_default_str();
  train->add_option("--seed", seeds, "training seed (first one is used)");
  train->add_option("--grad-mode", cfg.train.grad_mode, "analytic or check")
      ->transform(CLI::CheckedTransformer(grad_modes, CLI::ignore_case))
      ->option_text("{analytic,check}");
  add_hyper_flags(train, cfg, layers);

  auto* infer = app.add_subcommand("infer", "score test records and export anomaly maps");
  infer->add_option("--ckpt", cfg.ckpt)->required();
  infer->add_option("--test-features", cfg.test_features)->required();
  infer->add_option("--protos", cfg.protos)->required();
  infer->add_option("--out", cfg.out)->required();
  infer->add_option("--prompts", cfg.prompts, "normal pool for prompt banks (default: test features)");
  infer->add_option("--prompt-ids", cfg.prompt_ids, "explicit prompt ids, overrides sampling")->delimiter(',');
  infer->add_option("--bank-scope", cfg.bank_scope, "class: one bank per class; all: one shared bank")
      ->transform(CLI::CheckedTransformer(scopes, CLI::ignore_case))
      ->option_text("{class,all}");
  infer->add_option("--shots,-K", cfg.shots)->capture_default_str();
  infer->add_option("--seed", seeds, "sampling seed, repeatable");
  infer->add_option("--map-format", cfg.map_format)
      ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case))
      ->option_text("{pgm,png}");
  add_hyper_flags(infer, cfg, layers);

  auto* eval = app.add_subcommand("eval", "compute metrics for one or more inference runs");
  eval->add_option("--test-features", cfg.test_features, "ground truth features")->required();
  eval->add_option("--pred", cfg.predictions, "inference output directory, repeatable")->required();
  eval->add_option("--out", cfg.out)->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic feature set");
  synth->add_option("--out", cfg.out)->required();
  synth->add_option("--seed", seeds);
  synth->add_option("--classes", cfg.synth.classes)->capture_default_str();
  synth->add_option("--train-normals", cfg.synth.train_normals)->capture_default_str();
  synth->add_option("--train-abnormals", cfg.synth.train_abnormals)->capture_default_str();
  synth->add_option("--test-normals", cfg.synth.test_normals)->capture_default_str();
  synth->add_option("--test-abnormals", cfg.synth.test_abnormals)->capture_default_str();
  synth->add_option("--pool-normals", cfg.synth.pool_normals, "per class")->capture_default_str();
  synth->add_option("--d-cls", cfg.synth.d_cls)->capture_default_str();
  synth->add_option("--d-patch", cfg.synth.d_patch)->capture_default_str();
  synth->add_option("--d-text", cfg.synth.d_text)->capture_default_str();
  synth->add_option("--grid", cfg.synth.grid)->capture_default_str();
  synth->add_option("--image", cfg.synth.image)->capture_default_str();
  synth->add_option("--block", cfg.synth.block)->capture_default_str();
  synth->add_option("--magnitude", cfg.synth.magnitude)->capture_default_str();
  synth->add_option("--patch-noise", cfg.synth.patch_noise)->capture_default_str();
  synth->add_option("--class-noise", cfg.synth.class_noise)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!layers.empty()) {
      cfg.train.layers = parse_layers(layers);
      if (synth->parsed()) cfg.synth.layers = cfg.train.layers;
    }
    if (train->parsed()) gads::cli::cmd_train(cfg, std::cout);
    if (infer->parsed()) gads::cli::cmd_infer(cfg, std::cout);
    if (eval->parsed()) gads::cli::cmd_eval(cfg, std::cout);
    if (synth->parsed()) gads::cli::cmd_synth(cfg, std::cout);
  } catch (const gads::Error& e) {
    std::cerr << "gads: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gads: unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
