#include <CLI11.hpp>
#include <iostream>

#include "mkbparse/cli.hpp"

namespace {

void common(CLI::App* app, mkb::cli::Options& o) {
  app->add_option("--data-dir", o.data_dir, "dataset directory (default: data)");
  app->add_option("--out-dir", o.out_dir, "output directory");
  app->add_option("--seed", o.seed, "random seed")->capture_default_str();
  app->add_option("--domains", o.domains, "restrict to these domains")->delimiter(',');
  app->add_flag("--quiet", o.quiet, "suppress progress output");
}

void model_options(CLI::App* app, mkb::cli::Options& o) {
  app->add_option("--arch", o.archs, "architecture(s)")->delimiter(',');
  app->add_option("--preset", o.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}))->capture_default_str();
  app->add_option("--fraction", o.fraction, "training data fraction in (0, 1]");
  app->add_option("--epochs", o.epochs, "override epochs");
  app->add_option("--beam", o.beam, "override beam size");
  app->add_option("--hidden", o.hidden, "override hidden size");
  app->add_option("--embedding", o.embedding, "override embedding size");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-knowledge-base semantic parsing toolkit"};
  app.require_subcommand(1);
  mkb::cli::Options o;

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  common(gen, o);
  gen->add_option("--train-size", o.train_size, "training examples per domain (one value or one per domain)")
      ->delimiter(',')
      ->capture_default_str();
  gen->add_option("--test-size", o.test_size, "test examples per domain")->capture_default_str();

  auto* tr = app.add_subcommand("train", "train one model");
  common(tr, o);
  model_options(tr, o);
  tr->add_option("--dev-fraction", o.dev_fraction, "hold out this fraction of training data as dev");
  tr->add_flag("--rename-constants", o.rename, "make constants disjoint across domains");

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
  common(ev, o);
  ev->add_option("--model-dir", o.model_dir, "directory written by train");
  ev->add_option("--beam", o.beam, "override beam size");
  ev->add_option("--split", o.split, "test or dev")->check(CLI::IsMember({"test", "dev"}))->capture_default_str();
  ev->add_option("--dev-fraction", o.dev_fraction, "dev fraction (gold-echo only)");
  ev->add_flag("--gold-echo", o.gold_echo, "score the gold logical forms");

  auto* lc = app.add_subcommand("learning-curve", "accuracy vs training fraction");
  common(lc, o);
  model_options(lc, o);
  lc->add_option("--fractions,--train-sizes", o.fractions, "training fractions")->delimiter(',');
  lc->add_option("--seeds", o.seeds, "seeds per point")->capture_default_str();

  auto* ab = app.add_subcommand("ablate-constants", "original vs renamed constants");
  common(ab, o);
  model_options(ab, o);
  ab->add_option("--baseline", o.baseline, "reference architecture (default indep)");
  ab->add_option("--seeds", o.seeds, "seeds")->capture_default_str();

  auto* an = app.add_subcommand("analyze", "compare two evaluations");
  an->add_option("--baseline", o.baseline, "baseline evaluation dir")->required();
  an->add_option("--candidate", o.candidate, "candidate evaluation dir")->required();
  an->add_option("--out-dir", o.out_dir, "output directory (default: candidate)");
  an->add_option("--split", o.split, "test or dev")->check(CLI::IsMember({"test", "dev"}))->capture_default_str();
  an->add_flag("--quiet", o.quiet, "suppress output");

  auto* cp = app.add_subcommand("count-params", "parameter counts per architecture");
  common(cp, o);
  model_options(cp, o);
  cp->add_option("--profile", o.profile, "overnight or data")
      ->check(CLI::IsMember({"overnight", "data"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    o.workers = mkb::cli::workers_from_env();
    if (*gen) mkb::cli::cmd_generate(o);
    else if (*tr) mkb::cli::cmd_train(o);
    else if (*ev) mkb::cli::cmd_evaluate(o);
    else if (*lc) mkb::cli::cmd_learning_curve(o);
    else if (*ab) mkb::cli::cmd_ablate_constants(o);
    else if (*an) mkb::cli::cmd_analyze(o);
    else if (*cp) mkb::cli::cmd_count_params(o);
  } catch (const std::exception& e) {
    std::cerr << "mkbparse: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
