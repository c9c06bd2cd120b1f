#include "app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "commands.hpp"
#include "mlstm/error.hpp"

namespace mlstm::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool valid_key(const std::string& key) {
  return !key.empty() && key.front() != '-' && std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

}  // namespace

std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& source) {
  std::vector<ConfigEntry> entries;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string text = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (text.empty()) continue;
    const std::string where = source + ":" + std::to_string(line) + ": ";
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value'");
    ConfigEntry e{trim(std::string_view(text).substr(0, eq)), trim(std::string_view(text).substr(eq + 1)), line};
    if (!valid_key(e.key)) throw std::invalid_argument(where + "bad key '" + e.key + "'");
    if (e.value.empty()) throw std::invalid_argument(where + "empty value for '" + e.key + "'");
    if (!seen.insert(e.key).second) throw std::invalid_argument(where + "duplicate key '" + e.key + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ConfigEntry> read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

namespace {

const char* const kFooter =
    "Config file: one 'key = value' per line, '#' starts a comment. Every long option\n"
    "of any subcommand is a valid key (without the leading dashes); keys that belong to\n"
    "other subcommands are ignored, unknown keys are an error. Command-line flags\n"
    "override the file, which overrides the defaults.\n"
    "Exit codes: 0 success, 1 failure, 2 usage error, 3 data error.";

const std::vector<std::string> kModes{"robust", "mean-impute", "forward-impute"};
const std::vector<std::string> kMechanisms{"mcar", "dropout", "visit"};

TrainMode mode_of(const std::string& text) { return *parse_train_mode(text); }

std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> rates;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
      throw StructuralError("--rates: cannot parse '" + t + "'");
    }
    rates.push_back(v);
  }
  if (rates.empty()) throw StructuralError("--rates: empty list");
  return rates;
}

struct Parsed {
  PreprocessOptions preprocess;
  TrainOptions train;
  PredictOptions predict;
  EvaluateOptions evaluate;
  GradCheckConfig gradcheck;
  fs::path gradcheck_out;
  SweepOptions sweep;
  GenerateOptions generate;
  std::string train_mode = "robust";
  std::string predict_mode = "robust";
  std::string evaluate_mode = "robust";
  std::string compare_mode;
  std::string mechanism = "mcar";
  std::string rates = "0,0.1,0.2,0.3,0.4,0.5";
  double init_range_train = 0.05;
  double init_range_sweep = 0.05;
  std::string config;  // consumed before parsing
};

void add_common(CLI::App* sub, Parsed& p, fs::path* out_dir, std::uint64_t* seed, const std::string& seed_help) {
  sub->add_option("--config", p.config, "Read option defaults from a 'key = value' file");
  sub->add_option("--seed", *seed, seed_help)->capture_default_str();
  if (out_dir) sub->add_option("--out-dir", *out_dir, "Directory for output files")->capture_default_str();
}

void add_grid(CLI::App* sub, GridOptions& g) {
  sub->add_option("--interval", g.interval, "Visit grid spacing in months")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--horizon", g.horizon, "Last grid month; T = horizon / interval steps")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

void add_training(CLI::App* sub, TrainConfig& c, double& init_range) {
  sub->add_option("--epochs", c.epochs, "Full-batch training epochs")->capture_default_str();
  sub->add_option("--lr", c.optimizer.learning_rate, "Learning rate")->capture_default_str();
  sub->add_option("--momentum", c.optimizer.momentum, "Momentum")->capture_default_str();
  sub->add_option("--decay", c.optimizer.weight_decay, "L2 weight decay")->capture_default_str();
  sub->add_option("--init-range", init_range, "Initial weights are uniform in [-r, r]")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_flag("--decay-biases,!--no-decay-biases", c.optimizer.decay_biases, "Apply weight decay to biases (default off)");
  sub->add_flag("--decay-peepholes,!--no-decay-peepholes", c.optimizer.decay_peepholes,
                "Apply weight decay to peephole weights (default on)");
}

CLI::Option* add_mode(CLI::App* sub, std::string& mode, const std::string& name, const std::string& help) {
  return sub->add_option(name, mode, help)->check(CLI::IsMember(kModes))->capture_default_str();
}

std::unique_ptr<CLI::App> build(Parsed& p, std::function<int()>& action, std::ostream& log) {
  auto app = std::make_unique<CLI::App>("Peephole LSTM disease progression modeling with missing data", "mlstm");
  app->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app->require_subcommand(1);
  app->footer(kFooter);

  {
    auto& o = p.preprocess;
    auto* sub = app->add_subcommand("preprocess", "Clean, grid, split and scale a cohort CSV");
    add_common(sub, p, &o.out_dir, &o.seed, "Split seed");
    sub->add_option("--input", o.input, "Cohort CSV (subject_id, visit_month, biomarkers..., label[, icv])");
    sub->add_flag("--icv,!--no-icv", o.icv, "Divide biomarkers by the subject's intracranial volume (default off)");
    sub->add_option("--outlier-z", o.outlier_z, "Leave-one-out z threshold for outlier removal")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--min-visits", o.min_visits, "Observed visits required per biomarker")->capture_default_str();
    add_grid(sub, o.grid);
    sub->add_option("--val-fraction", o.val_fraction, "Validation share of subjects")->capture_default_str();
    sub->add_option("--test-fraction", o.test_fraction, "Test share of subjects")->capture_default_str();
    sub->callback([&p, &action, &log] { action = [&p, &log] { run_preprocess(p.preprocess, log); return 0; }; });
  }
  {
    auto& o = p.train;
    auto* sub = app->add_subcommand("train", "Train a model on a preprocessed training CSV");
    add_common(sub, p, &o.out_dir, &o.config.seed, "Weight initialization seed");
    sub->add_option("--train", o.train, "Preprocessed training CSV");
    sub->add_option("--val", o.val, "Preprocessed validation CSV (per-epoch MAE)");
    sub->add_option("--scaling", o.scaling, "Scaling file, needed with --val");
    add_mode(sub, p.train_mode, "--mode", "robust, mean-impute or forward-impute");
    add_training(sub, o.config, p.init_range_train);
    sub->add_option("--patience", o.config.patience, "Stop after this many epochs without validation gain, 0 = off")
        ->capture_default_str();
    add_grid(sub, o.grid);
    sub->callback([&p, &action, &log] {
      action = [&p, &log] {
        p.train.config.mode = mode_of(p.train_mode);
        p.train.config.init_lo = -p.init_range_train;
        p.train.config.init_hi = p.init_range_train;
        run_train(p.train, log);
        return 0;
      };
    });
  }
  {
    auto& o = p.predict;
    auto* sub = app->add_subcommand("predict", "Predict one step ahead for every subject and slot");
    sub->add_option("--config", p.config, "Read option defaults from a 'key = value' file");
    sub->add_option("--out-dir", o.out_dir, "Directory for output files")->capture_default_str();
    sub->add_option("--model", o.model, "Model file");
    sub->add_option("--input", o.input, "Preprocessed CSV to predict from");
    sub->add_option("--scaling", o.scaling, "Scaling file");
    sub->add_option("--train", o.train, "Training CSV for imputation statistics");
    add_mode(sub, p.predict_mode, "--mode", "Mode the model was trained with");
    add_grid(sub, o.grid);
    sub->callback([&p, &action, &log] {
      action = [&p, &log] {
        p.predict.mode = mode_of(p.predict_mode);
        run_predict(p.predict, log);
        return 0;
      };
    });
  }
  {
    auto& o = p.evaluate;
    auto* sub = app->add_subcommand("evaluate", "MAE, diagnosis AUCs and paired significance tests");
    sub->add_option("--config", p.config, "Read option defaults from a 'key = value' file");
    sub->add_option("--out-dir", o.out_dir, "Directory for output files")->capture_default_str();
    sub->add_option("--model", o.model, "Model file");
    sub->add_option("--train", o.train, "Preprocessed training CSV (classifier fit, imputation statistics)");
    sub->add_option("--test", o.test, "Preprocessed test CSV");
    sub->add_option("--scaling", o.scaling, "Scaling file");
    add_mode(sub, p.evaluate_mode, "--mode", "Mode the model was trained with");
    sub->add_option("--compare-model", o.compare_model, "Second model for the paired tests (default: --model)");
    sub->add_option("--compare-mode", p.compare_mode, "Mode of the second model (default: --mode)")
        ->check(CLI::IsMember(kModes));
    sub->add_option("--shrinkage", o.shrinkage, "Covariance shrinkage of the classifier")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    add_grid(sub, o.grid);
    sub->callback([&p, &action, &log] {
      action = [&p, &log] {
        p.evaluate.mode = mode_of(p.evaluate_mode);
        if (!p.compare_mode.empty()) p.evaluate.compare_mode = mode_of(p.compare_mode);
        run_evaluate(p.evaluate, log);
        return 0;
      };
    });
  }
  {
    auto& o = p.gradcheck;
    auto* sub = app->add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    add_common(sub, p, &p.gradcheck_out, &o.seed, "Instance seed");
    sub->add_option("--inputs", o.N, "Input size N")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--hidden", o.M, "Hidden size M")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--steps", o.T, "Sequence length T")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--subjects", o.J, "Subjects J")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--missing-x", o.missing_x, "Input drop probability")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->add_option("--missing-s", o.missing_s, "Target drop probability")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->add_option("--epsilon", o.epsilon, "Central difference step")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--tolerance", o.tolerance, "Maximum relative error")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_flag("--corrupt-vo", o.corrupt_vo, "Perturb the output peephole gradient (checker self-test)");
    sub->callback([&p, &action, &log] {
      action = [&p, &log] { return run_gradcheck(p.gradcheck, p.gradcheck_out, log) ? kExitOk : kExitFailure; };
    });
  }
  {
    auto& o = p.sweep;
    auto* sub = app->add_subcommand("sweep", "Remove extra training data at several rates and compare methods");
    add_common(sub, p, &o.out_dir, &o.config.seed, "Initialization and removal seed");
    sub->add_option("--train", o.train, "Preprocessed training CSV");
    sub->add_option("--test", o.test, "Preprocessed test CSV");
    sub->add_option("--scaling", o.scaling, "Scaling file");
    sub->add_option("--rates", p.rates, "Comma-separated removal rates in [0, 0.5]")->capture_default_str();
    add_training(sub, o.config, p.init_range_sweep);
    add_grid(sub, o.grid);
    sub->callback([&p, &action, &log] {
      action = [&p, &log] {
        p.sweep.rates = parse_rates(p.rates);
        p.sweep.config.init_lo = -p.init_range_sweep;
        p.sweep.config.init_hi = p.init_range_sweep;
        run_sweep(p.sweep, log);
        return 0;
      };
    });
  }
  {
    auto& o = p.generate;
    auto& c = o.config;
    auto* sub = app->add_subcommand("generate", "Write a synthetic longitudinal cohort CSV");
    add_common(sub, p, &o.out_dir, &c.seed, "Cohort seed");
    sub->add_option("--subjects", c.subjects, "Number of subjects")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--slots", c.slots, "Visits per subject, baseline included")->capture_default_str();
    sub->add_option("--interval", c.interval_months, "Months between visits")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--noise", c.noise_sd, "Noise SD as a fraction of each biomarker's amplitude")
        ->capture_default_str();
    sub->add_option("--missing-rate", c.missing_rate, "Fraction of missing cells")->capture_default_str();
    sub->add_option("--mechanism", p.mechanism, "mcar, dropout or visit")
        ->check(CLI::IsMember(kMechanisms))
        ->capture_default_str();
    sub->add_option("--offset-lo", c.offset_lo, "Lowest disease-time offset in years")->capture_default_str();
    sub->add_option("--offset-hi", c.offset_hi, "Highest disease-time offset in years")->capture_default_str();
    sub->add_option("--mci-threshold", c.mci_threshold, "Disease time at which subjects become MCI")
        ->capture_default_str();
    sub->add_option("--ad-threshold", c.ad_threshold, "Disease time at which subjects become AD")
        ->capture_default_str();
    sub->add_option("--min-observed", c.min_observed, "Observed visits kept per biomarker")->capture_default_str();
    sub->callback([&p, &action, &log] {
      action = [&p, &log] {
        p.generate.config.mechanism = *parse_missingness(p.mechanism);
        run_generate(p.generate, log);
        return 0;
      };
    });
  }
  return app;
}

std::set<std::string> long_names(const CLI::App& sub) {
  std::set<std::string> names;
  for (const CLI::Option* opt : sub.get_options()) {
    for (const std::string& n : opt->get_lnames()) names.insert(n);
    for (const std::string& n : opt->get_fnames()) names.insert(n);
  }
  names.erase("help");
  names.erase("config");
  return names;
}

// Finds "--config X" or "--config=X" after the subcommand token.
std::optional<std::string> find_config(const std::vector<std::string>& args, std::size_t from) {
  std::optional<std::string> path;
  for (std::size_t i = from; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  return path;
}

// Config entries become "--key=value" tokens placed right after the
// subcommand, so later command-line flags take precedence.
std::vector<std::string> expand_config(const CLI::App& app, const std::vector<std::string>& args) {
  std::size_t sub_at = args.size();
  const CLI::App* sub = nullptr;
  for (std::size_t i = 0; i < args.size(); ++i) {
    for (const CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; })) {
      if (s->get_name() == args[i]) {
        sub = s;
        sub_at = i;
        break;
      }
    }
    if (sub) break;
  }
  if (!sub) return args;
  const auto path = find_config(args, sub_at + 1);
  if (!path) return args;

  std::set<std::string> known;
  for (const CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; })) {
    const auto names = long_names(*s);
    known.insert(names.begin(), names.end());
  }
  const std::set<std::string> mine = long_names(*sub);

  std::vector<std::string> injected;
  for (const ConfigEntry& e : read_config(*path)) {
    if (!known.count(e.key)) {
      throw std::invalid_argument(*path + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    }
    if (mine.count(e.key)) injected.push_back("--" + e.key + "=" + e.value);
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1));
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1), args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Parsed parsed;
  std::function<int()> action;
  auto app = build(parsed, action, out);

  try {
    std::vector<std::string> expanded = expand_config(*app, args);
    std::reverse(expanded.begin(), expanded.end());
    app->parse(std::move(expanded));
  } catch (const CLI::ParseError& e) {
    const int code = app->exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const StructuralError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace mlstm::cli
