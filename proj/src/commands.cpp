#include "sat/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sat/errors.hpp"
#include "sat/training.hpp"

namespace sat {

namespace fs = std::filesystem;

void check_compatible(const SatConfig& model, const SynthConfig& data) {
  if (data.regions() != model.regions()) {
    throw ConfigError("dataset has " + std::to_string(data.regions()) + " regions, model expects " +
                      std::to_string(model.regions()));
  }
  if (data.class_counts != model.class_counts) throw ConfigError("dataset class counts differ from the model's");
  if (data.image_size != model.image_size) {
    throw ConfigError("dataset images are " + std::to_string(data.image_size) + " px, model expects " +
                      std::to_string(model.image_size));
  }
}

namespace {

std::string fmt_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.8g", x);
  return buf;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw IoError("checkpoint rng state is corrupt");
  return rng;
}

std::string config_identity(const RunConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("output_dir");
  return j.dump();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

struct ValScores {
  std::vector<double> region_mae;
  std::optional<double> sum_mae;
};

ValScores score_validation(const SatParams<float>& params, const SatConfig& model, const Dataset& val) {
  const Predictions pred = predict_dataset(params, model, val.samples);
  const LabelMatrix truth = label_table(val.samples);
  const EvalReport rep = build_report(pred.scores, truth, {}, AgeMap::linear_default(), {}, "");
  return {rep.per_region_mae, rep.sum_mae};
}

template <typename F>
int guarded(spdlog::logger& log, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    log.critical("numerical failure: {}", e.what());
    return kExitNumerical;
  } catch (const ConfigError& e) {
    log.error("config error: {}", e.what());
  } catch (const IoError& e) {
    log.error("i/o error: {}", e.what());
  } catch (const DataError& e) {
    log.error("data error: {}", e.what());
  } catch (const DimensionError& e) {
    log.error("shape error: {}", e.what());
  } catch (const ContractError& e) {
    log.error("contract error: {}", e.what());
  } catch (const std::exception& e) {
    log.critical("internal error: {}", e.what());
    return 1;
  }
  return kExitUsage;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& history, std::size_t regions) {
  bool has_val = false, has_val_sum = false;
  for (const auto& r : history) {
    has_val = has_val || r.val_mae.has_value();
    has_val_sum = has_val_sum || r.val_sum_mae.has_value();
  }
  std::ostringstream os;
  os << "epoch,lr,ce,mean,variance,total";
  for (std::size_t r = 0; r < regions; ++r) os << ",train_mae_" << region_name(r);
  if (has_val)
    for (std::size_t r = 0; r < regions; ++r) os << ",val_mae_" << region_name(r);
  if (has_val_sum) os << ",val_sum_mae";
  os << '\n';
  for (const auto& row : history) {
    os << row.epoch << ',' << fmt_num(row.lr) << ',' << fmt_num(row.loss.ce) << ',' << fmt_num(row.loss.mean) << ','
       << fmt_num(row.loss.variance) << ',' << fmt_num(row.loss.total);
    for (double v : row.train_mae) os << ',' << fmt_num(v);
    if (has_val) {
      for (std::size_t r = 0; r < regions; ++r) os << ',' << (row.val_mae ? fmt_num((*row.val_mae)[r]) : "");
    }
    if (has_val_sum) os << ',' << (row.val_sum_mae ? fmt_num(*row.val_sum_mae) : "");
    os << '\n';
  }
  return os.str();
}

TrainRunResult train_run(const RunConfig& cfg, const Dataset& train, const TrainRunOptions& opts) {
  cfg.validate();
  check_compatible(cfg.model, train.config);
  if (opts.val != nullptr) check_compatible(cfg.model, opts.val->config);
  auto log = opts.logger ? opts.logger : spdlog::default_logger();

  TrainRunResult result;
  Checkpoint& state = result.final_state;
  if (opts.resume) {
    state = *opts.resume;
    if (config_identity(state.config) != config_identity(cfg)) {
      throw ConfigError("resume: checkpoint was written with a different configuration");
    }
    log->info("resuming after epoch {} (step {})", state.epoch, state.global_step);
  } else {
    state.config = cfg;
    state.params = init_params<float>(cfg.model, cfg.seed);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5eedu};
    state.rng_state = rng_to_string(std::mt19937_64(seq));
  }
  state.config.output_dir = cfg.output_dir;

  MomentumSgd<float> sgd(cfg.optim.momentum);
  if (!state.momentum.empty()) sgd.set_buffers(state.momentum);
  TrainState ts;
  ts.epoch = state.epoch;
  ts.global_step = state.global_step;
  ts.rng = rng_from_string(state.rng_state);

  if (opts.write_artifacts) fs::create_directories(opts.out_dir);
  const std::size_t regions = cfg.model.regions();
  log->info("training {} on {} samples for {} epochs ({} steps per epoch)", to_string(cfg.variant),
            train.samples.size(), cfg.optim.epochs, steps_per_epoch(train.samples.size(), cfg.optim));

  while (ts.epoch < cfg.optim.epochs) {
    if (opts.halt_after && ts.epoch >= *opts.halt_after) {
      result.halted = true;
      log->info("halting after epoch {} as requested", ts.epoch);
      break;
    }
    const EpochStats stats =
        train_epoch(state.params, cfg.model, sgd, train.samples, cfg.optim, cfg.loss, ts, cfg.optim.augment);
    ++ts.epoch;

    MetricsRow row;
    row.epoch = ts.epoch;
    row.lr = stats.last_lr;
    row.loss = stats.loss;
    row.train_mae = stats.region_mae;
    double metric = stats.loss.total;
    if (opts.val != nullptr) {
      const ValScores v = score_validation(state.params, cfg.model, *opts.val);
      row.val_mae = v.region_mae;
      row.val_sum_mae = v.sum_mae;
      if (v.sum_mae) {
        metric = *v.sum_mae;
      } else {
        metric = 0.0;
        for (double m : v.region_mae) metric += m / static_cast<double>(regions);
      }
    }
    state.epoch = ts.epoch;
    state.global_step = ts.global_step;
    state.rng_state = rng_to_string(ts.rng);
    state.momentum = sgd.buffers();
    state.history.push_back(row);
    const bool improved = !state.best_metric || metric < *state.best_metric;
    if (improved) {
      state.best_metric = metric;
      state.best_epoch = ts.epoch;
    }
    log->info("epoch {}/{}: loss {:.5f} (ce {:.5f}, mean {:.5f}, var {:.5f}) lr {:.6f}{}", ts.epoch,
              cfg.optim.epochs, stats.loss.total, stats.loss.ce, stats.loss.mean, stats.loss.variance, stats.last_lr,
              row.val_sum_mae ? fmt::format(", val sum-MAE {:.4f}", *row.val_sum_mae) : std::string());
    if (opts.write_artifacts) {
      write_text(opts.out_dir / "metrics.csv", metrics_csv(state.history, regions));
      save_checkpoint(state, opts.out_dir / "ckpt_final.bin");
      if (improved) save_checkpoint(state, opts.out_dir / "ckpt_best.bin");
    }
  }
  return result;
}

EvalReport evaluate(const SatParams<float>& params, const RunConfig& cfg, const Dataset& data,
                    const std::vector<double>& thetas, const AgeMap& age_map) {
  check_compatible(cfg.model, data.config);
  const Predictions pred = predict_dataset(params, cfg.model, data.samples, true);
  return build_report(pred.scores, label_table(data.samples), thetas, age_map, pred.records, to_string(cfg.variant));
}

CompareResult compare_reports(const EvalReport& a, const EvalReport& b) {
  if (a.num_samples != b.num_samples) {
    throw DataError("reports cover different sample counts (" + std::to_string(a.num_samples) + " vs " +
                    std::to_string(b.num_samples) + ")");
  }
  if (a.per_region_mae.size() != b.per_region_mae.size()) throw DataError("reports have different region counts");
  CompareResult res;
  const auto& ea = a.baa_abs_errors.empty() ? a.sum_abs_errors : a.baa_abs_errors;
  const auto& eb = b.baa_abs_errors.empty() ? b.sum_abs_errors : b.baa_abs_errors;
  if (ea.size() != a.num_samples || eb.size() != b.num_samples) {
    throw DataError("reports lack per-sample bone-age errors");
  }
  res.test = wilcoxon_signed_rank(ea, eb);
  for (std::size_t r = 0; r < a.per_region_mae.size(); ++r) {
    res.region_mae_delta.push_back(a.per_region_mae[r] - b.per_region_mae[r]);
  }
  if (a.sum_mae && b.sum_mae) res.sum_mae_delta = *a.sum_mae - *b.sum_mae;
  if (a.baa_mae && b.baa_mae) res.baa_mae_delta = *a.baa_mae - *b.baa_mae;
  return res;
}

int cmd_gen(const GenOptions& opts, std::ostream& out) {
  auto log = make_logger();
  return guarded(*log, [&] {
    RunConfig cfg = opts.config ? load_run_config(*opts.config) : default_run_config();
    SynthConfig data = cfg.data;
    if (opts.seed) data.seed = *opts.seed;
    if (opts.num_samples) data.num_samples = *opts.num_samples;
    data.validate();
    const auto samples = generate(data);
    write_dataset(samples, data, opts.out);
    log->info("wrote {} samples to {}", samples.size(), opts.out.string());

    const auto corr = label_correlation(label_table(samples));
    out << "label correlation (Pearson, " << samples.size() << " samples)\n";
    char buf[64];
    out << std::string(20, ' ');
    for (std::size_t c = 0; c < corr.size(); ++c) {
      std::snprintf(buf, sizeof buf, " %8s", ("r" + std::to_string(c)).c_str());
      out << buf;
    }
    out << '\n';
    for (std::size_t r = 0; r < corr.size(); ++r) {
      std::snprintf(buf, sizeof buf, "r%-2zu %-16s", r, std::string(region_name(r)).c_str());
      out << buf;
      for (double v : corr[r]) {
        std::snprintf(buf, sizeof buf, " %8.4f", v);
        out << buf;
      }
      out << '\n';
    }
    return kExitOk;
  });
}

int cmd_train(const TrainOptions& opts, std::ostream& out) {
  auto console = make_logger();
  return guarded(*console, [&] {
    std::optional<Checkpoint> resume;
    RunConfig cfg;
    if (opts.resume) {
      resume = load_checkpoint(*opts.resume);
      cfg = resume->config;
      if (opts.config && config_identity(load_run_config(*opts.config)) != config_identity(cfg)) {
        throw ConfigError("--config differs from the configuration stored in " + opts.resume->string());
      }
      if (opts.variant || opts.seed) throw ConfigError("--variant and --seed cannot change a resumed run");
      const fs::path parent = opts.resume->parent_path();
      cfg.output_dir = parent.empty() ? "." : parent.string();
    } else {
      cfg = opts.config ? load_run_config(*opts.config) : default_run_config();
      if (opts.variant) {
        cfg.variant = parse_variant(*opts.variant);
        cfg.model.apply_variant(cfg.variant);
      }
      if (opts.seed) cfg.seed = *opts.seed;
    }
    if (opts.out) cfg.output_dir = opts.out->string();
    cfg.validate();
    const fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    auto log = make_logger(out_dir / "train.log");

    const Dataset train = read_dataset(opts.data);
    std::optional<Dataset> val;
    if (opts.val) val = read_dataset(*opts.val);

    TrainRunOptions run;
    run.out_dir = out_dir;
    run.val = val ? &*val : nullptr;
    run.resume = std::move(resume);
    run.halt_after = opts.halt_after;
    run.logger = log;
    const TrainRunResult result = train_run(cfg, train, run);
    const Checkpoint& st = result.final_state;
    out << (result.halted ? "halted" : "finished") << " after epoch " << st.epoch << " of " << cfg.optim.epochs;
    if (!st.history.empty()) out << "; final loss " << fmt_num(st.history.back().loss.total);
    if (st.best_metric) out << "; best epoch " << st.best_epoch;
    out << "\n";
    return kExitOk;
  });
}

namespace {

fs::path output_dir_for(const std::optional<fs::path>& out, const fs::path& ckpt) {
  fs::path dir = out ? *out : ckpt.parent_path();
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  return dir;
}

std::string pad(std::string_view s, std::size_t width) {
  std::string out(s);
  if (out.size() < width) out.append(width - out.size(), ' ');
  return out;
}

}  // namespace

int cmd_eval(const EvalOptions& opts, std::ostream& out) {
  auto log = make_logger();
  return guarded(*log, [&] {
    const Checkpoint ckpt = load_checkpoint(opts.ckpt);
    const Dataset data = read_dataset(opts.data);
    const AgeMap map = opts.agemap ? AgeMap::from_json_file(*opts.agemap) : AgeMap::linear_default();
    if (opts.thetas.empty()) throw ConfigError("eval: need at least one --theta");
    const EvalReport rep = evaluate(ckpt.params, ckpt.config, data, opts.thetas, map);
    const fs::path dir = output_dir_for(opts.out, opts.ckpt);
    write_report_json(rep, dir / "report.json");
    write_report_csv(rep, dir / "report.csv");
    if (rep.age_clamped > 0) log->warn("{} scores fell outside the age map and were clamped", rep.age_clamped);

    out << "evaluated " << rep.num_samples << " samples (" << rep.variant << ")\n";
    for (std::size_t r = 0; r < rep.per_region_mae.size(); ++r) {
      out << "  " << pad(region_name(r), 18) << "MAE " << format_sig6(rep.per_region_mae[r]);
      if (r < rep.anisotropy.size()) out << "  anisotropy " << format_sig6(rep.anisotropy[r]);
      out << '\n';
    }
    if (rep.sum_mae) out << "  " << pad("sum", 18) << "MAE " << format_sig6(*rep.sum_mae) << '\n';
    if (rep.baa_mae) out << "  " << pad("baa", 18) << "MAE " << format_sig6(*rep.baa_mae) << '\n';
    for (const auto& e : rep.cs) {
      out << "  CS(" << format_sig6(e.theta) << ")";
      if (e.sum) out << " sum " << format_sig6(*e.sum) << "%";
      out << '\n';
    }
    out << "  mean anisotropy " << format_sig6(rep.mean_anisotropy) << '\n';
    return kExitOk;
  });
}

int cmd_compare(const CompareOptions& opts, std::ostream& out) {
  auto log = make_logger();
  return guarded(*log, [&] {
    const EvalReport a = read_report_json(opts.report_a);
    const EvalReport b = read_report_json(opts.report_b);
    const CompareResult res = compare_reports(a, b);
    out << "Wilcoxon signed-rank on per-sample " << (a.baa_abs_errors.empty() ? "sum" : "bone-age")
        << " errors: n=" << res.test.n << " W+=" << format_sig6(res.test.w_plus)
        << " W-=" << format_sig6(res.test.w_minus) << " statistic=" << format_sig6(res.test.statistic)
        << " p=" << format_sig6(res.test.p_value) << (res.test.exact ? " (exact)" : " (normal approx.)") << '\n';
    out << pad("region", 18) << "mae_a      mae_b      delta\n";
    char buf[96];
    auto line = [&](std::string_view name, double x, double y) {
      std::snprintf(buf, sizeof buf, "%-10s %-10s %s", format_sig6(x).c_str(), format_sig6(y).c_str(),
                    format_sig6(x - y).c_str());
      out << pad(name, 18) << buf << '\n';
    };
    for (std::size_t r = 0; r < a.per_region_mae.size(); ++r) line(region_name(r), a.per_region_mae[r], b.per_region_mae[r]);
    if (a.sum_mae && b.sum_mae) line("sum", *a.sum_mae, *b.sum_mae);
    if (a.baa_mae && b.baa_mae) line("baa", *a.baa_mae, *b.baa_mae);
    return kExitOk;
  });
}

int cmd_inspect(const InspectOptions& opts, std::ostream& out) {
  auto log = make_logger();
  return guarded(*log, [&] {
    const Checkpoint ckpt = load_checkpoint(opts.ckpt);
    const Dataset data = read_dataset(opts.data);
    check_compatible(ckpt.config.model, data.config);
    if (opts.sample < 0 || static_cast<std::size_t>(opts.sample) >= data.samples.size()) {
      throw DataError("sample index " + std::to_string(opts.sample) + " is outside [0, " +
                      std::to_string(data.samples.size()) + ")");
    }
    const std::vector<RegionSample> one{data.samples[static_cast<std::size_t>(opts.sample)]};
    const Predictions pred = predict_dataset(ckpt.params, ckpt.config.model, one, true);
    const fs::path dir = output_dir_for(opts.out, opts.ckpt);
    const std::size_t n = ckpt.config.model.tokens();
    for (const auto& rec : pred.records) {
      std::ostringstream os;
      char buf[40];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          std::snprintf(buf, sizeof buf, "%.9g", rec.post_softmax[i * n + j]);
          os << (j ? "," : "") << buf;
        }
        os << '\n';
      }
      write_text(dir / ("attn_L" + std::to_string(rec.layer) + "_H" + std::to_string(rec.head) + ".csv"), os.str());
    }
    const auto values = anisotropy(pred.records, ckpt.config.model.regions());
    out << "sample " << opts.sample << ": " << pred.records.size() << " attention maps written to " << dir.string()
        << '\n';
    out << "own-region attention mass from each CLS token (mean over layers and heads):\n";
    double mean = 0.0;
    for (std::size_t r = 0; r < values.size(); ++r) {
      out << "  " << pad(region_name(r), 18) << format_sig6(values[r]) << "  (uniform " << format_sig6(1.0 / static_cast<double>(n))
          << ")\n";
      mean += values[r] / static_cast<double>(values.size());
    }
    out << "  " << pad("mean", 18) << format_sig6(mean) << '\n';
    return kExitOk;
  });
}

}  // namespace sat
