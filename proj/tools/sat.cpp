// Command-line front end: gen | train | eval | compare | inspect.

#include <iostream>

#include <CLI11.hpp>

#include "sat/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Self-accumulative transformer for multi-view ordinal scoring on synthetic elbow data"};
  app.require_subcommand(1);

  sat::GenOptions gen;
  std::string gen_config;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset and print its label correlations");
  g->add_option("config", gen_config, "run config JSON (its data section is used)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--seed", gen.seed, "override data.seed");
  g->add_option("--num-samples", gen.num_samples, "override data.num_samples");

  sat::TrainOptions train;
  std::string train_config;
  auto* t = app.add_subcommand("train", "train a model variant");
  t->add_option("config", train_config, "run config JSON")->check(CLI::ExistingFile);
  t->add_option("--data", train.data, "training dataset directory")->required();
  t->add_option("--val", train.val, "validation dataset used to pick ckpt_best.bin");
  t->add_option("--resume", train.resume, "continue from a checkpoint");
  t->add_option("--out", train.out, "output directory (overrides output_dir)");
  t->add_option("--variant", train.variant, "sat | sat_no_tr | sat_no_rab | mvmt_vit");
  t->add_option("--seed", train.seed, "override the run seed");
  t->add_option("--halt-after", train.halt_after, "stop after this many completed epochs");

  sat::EvalOptions eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint and write report.json / report.csv");
  e->add_option("--ckpt", eval.ckpt, "checkpoint file")->required();
  e->add_option("--data", eval.data, "dataset directory")->required();
  e->add_option("--out", eval.out, "output directory (default: next to the checkpoint)");
  e->add_option("--theta", eval.thetas, "CS thresholds")->expected(1, -1);
  e->add_option("--agemap", eval.agemap, "JSON file with score->age knots");

  sat::CompareOptions compare;
  std::vector<std::string> reports;
  auto* c = app.add_subcommand("compare", "paired comparison of two reports");
  c->add_option("--report", reports, "two report.json files")->required()->expected(2);

  sat::InspectOptions inspect;
  auto* i = app.add_subcommand("inspect", "dump attention maps for one sample");
  i->add_option("--ckpt", inspect.ckpt, "checkpoint file")->required();
  i->add_option("--data", inspect.data, "dataset directory")->required();
  i->add_option("--sample", inspect.sample, "sample index")->required();
  i->add_option("--out", inspect.out, "output directory (default: next to the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : sat::kExitUsage;
  }

  if (*g) {
    if (!gen_config.empty()) gen.config = gen_config;
    return sat::cmd_gen(gen, std::cout);
  }
  if (*t) {
    if (!train_config.empty()) train.config = train_config;
    return sat::cmd_train(train, std::cout);
  }
  if (*e) return sat::cmd_eval(eval, std::cout);
  if (*c) {
    compare.report_a = reports.at(0);
    compare.report_b = reports.at(1);
    return sat::cmd_compare(compare, std::cout);
  }
  return sat::cmd_inspect(inspect, std::cout);
}
