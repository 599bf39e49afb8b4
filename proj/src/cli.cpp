#include "pclc/cli.hpp"

#include <CLI11.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pclc/checkpoint.hpp"
#include "pclc/error.hpp"
#include "pclc/evaluator.hpp"
#include "pclc/run_config.hpp"

namespace pclc {

namespace fs = std::filesystem;

namespace {

// Options shared by every subcommand. Precedence: config file, then --set
// assignments in order, then the named flags.
struct CommonOptions {
  std::string config_file;
  std::vector<std::string> assignments;
  std::optional<std::string> target;
  std::optional<std::size_t> few_shot;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> corpus;
  std::optional<std::string> embeddings;
  std::optional<std::size_t> max_epochs;

  // A repeated scalar flag keeps its last value.
  void attach(CLI::App& app) {
    constexpr auto last = CLI::MultiOptionPolicy::TakeLast;
    app.add_option("-c,--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("-s,--set", assignments, "override one key, as key=value (repeatable)");
    app.add_option("-t,--target", target, "target domain")->multi_option_policy(last);
    app.add_option("--few-shot", few_shot, "few-shot sample count k")->multi_option_policy(last);
    app.add_option("--lambda", lambda, "label-confusion factor")->multi_option_policy(last);
    app.add_option("--seed", seed, "random seed")->multi_option_policy(last);
    app.add_option("-o,--output-dir", output_dir, "run directory")->multi_option_policy(last);
    app.add_option("--corpus", corpus, "corpus directory")->multi_option_policy(last);
    app.add_option("--embeddings", embeddings, "embeddings file")->multi_option_policy(last);
    app.add_option("--max-epochs", max_epochs, "epoch cap")->multi_option_policy(last);
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file.empty()) c.load_file(config_file);
    for (const auto& a : assignments) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) throw Error("cli", "--set expects key=value, got '" + a + "'");
      c.set(a.substr(0, eq), a.substr(eq + 1));
    }
    if (target) c.target = *target;
    if (few_shot) c.train.fewshot_k = *few_shot;
    if (lambda) c.train.pclc.lambda = *lambda;
    if (seed) c.train.seed = *seed;
    if (output_dir) c.output_dir = *output_dir;
    if (corpus) c.corpus_dir = *corpus;
    if (embeddings) c.set("embeddings", *embeddings);
    if (max_epochs) c.max_epochs = *max_epochs;
    return c;
  }
};

std::string keys_help() {
  std::ostringstream s;
  s << "\nConfig keys:\n";
  for (const auto& d : config_key_docs()) {
    const std::string key = d.key;
    s << "  " << key << std::string(key.size() < 22 ? 22 - key.size() : 1, ' ') << d.meaning << "\n";
  }
  s << "\nThe " << kOutputRootEnv << " environment variable, when set, roots relative output directories.\n";
  return s.str();
}

fs::path default_checkpoint(const RunConfig& c, const std::string& given) {
  return given.empty() ? c.run_dir() / "model.ckpt" : fs::path(given);
}

Checkpoint load_existing(const fs::path& path) {
  if (!fs::exists(path)) throw Error("cli", "checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto outcome = run_train(c, &out);
  write_report_text(out, outcome.test);
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint, const std::string& report_path, std::ostream& out) {
  const auto path = default_checkpoint(c, checkpoint);
  if (!fs::exists(path)) throw Error("eval", "checkpoint not found: " + path.string());
  const auto report = run_eval(c, path);
  write_report_text(out, report);
  const fs::path kv = report_path.empty() ? fs::path(path.string() + ".eval.kv") : fs::path(report_path);
  std::ofstream f(kv, std::ios::binary);
  if (!f) throw Error("eval", "cannot write " + kv.string());
  write_report_kv(f, report);
  out << "report written to " << kv.string() << "\n";
  return 0;
}

std::vector<std::vector<std::string>> read_utterances(std::istream& in) {
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream s(line);
    std::vector<std::string> tokens;
    for (std::string t; s >> t;) tokens.push_back(t);
    if (!tokens.empty()) out.push_back(std::move(tokens));
  }
  return out;
}

int cmd_predict(const RunConfig& c, const std::string& checkpoint, const std::string& input, const std::string& output,
                std::ostream& out) {
  const auto cp = load_existing(default_checkpoint(c, checkpoint));
  const auto model = restore_model(cp);
  std::vector<std::vector<std::string>> utterances;
  if (input.empty() || input == "-") {
    utterances = read_utterances(std::cin);
  } else {
    std::ifstream in(input);
    if (!in) throw Error("predict", "cannot open " + input);
    utterances = read_utterances(in);
  }
  std::ofstream file;
  if (!output.empty()) {
    file.open(output, std::ios::binary);
    if (!file) throw Error("predict", "cannot write " + output);
  }
  std::ostream& dst = output.empty() ? out : file;
  const auto& layout = model->layout();
  std::vector<std::size_t> rows;
  for (std::size_t r = layout.boundary(); r < layout.rows(); ++r) rows.push_back(r);
  const auto prototypes = model->prototype_values();
  dst << "# domain: " << layout.target_domain << "\n";
  for (const auto& tokens : utterances) {
    std::vector<std::string> tags(tokens.size(), "O");
    for (const auto& span : model->predict(tokens, prototypes, rows)) {
      for (std::size_t i = span.start; i <= span.end; ++i) tags[i] = (i == span.start ? "B-" : "I-") + span.label;
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) dst << tokens[i] << '\t' << tags[i] << "\n";
    dst << "\n";
  }
  return 0;
}

int cmd_export(const RunConfig& c, const std::string& checkpoint, const std::string& output, std::ostream& out) {
  const auto cp = load_existing(default_checkpoint(c, checkpoint));
  const auto model = restore_model(cp);
  const fs::path path = output.empty() ? c.run_dir() / "prototypes.tsv" : fs::path(output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  export_prototypes(path, model->prototype_values(), model->layout());
  out << "exported " << model->layout().rows() << " prototypes to " << path.string() << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& base, const std::vector<double>& requested, bool parallel, std::ostream& out,
              std::ostream& err) {
  std::vector<double> lambdas;
  for (double l : requested) {
    if (!(l >= 0.0 && l <= 1.0)) throw Error("sweep-lambda", "lambda " + format_double(l) + " is outside [0, 1]");
    if (std::find(lambdas.begin(), lambdas.end(), l) != lambdas.end()) {
      err << "warning: duplicate lambda " << format_double(l) << " ignored\n";
      continue;
    }
    lambdas.push_back(l);
  }
  if (lambdas.empty()) throw Error("sweep-lambda", "no lambda values given");
  base.validate();

  std::vector<RunConfig> configs;
  for (double l : lambdas) {
    RunConfig c = base;
    c.train.pclc.lambda = l;
    c.output_dir = base.output_dir / ("lambda-" + format_double(l));
    configs.push_back(std::move(c));
  }
  // First line is the TSV row, the rest is progress text.
  auto run_one = [&](std::size_t i) {
    std::ostringstream progress;
    const auto o = run_train(configs[i], &progress);
    return format_double(lambdas[i]) + '\t' + format_double(o.test.f1()) + '\t' + format_double(o.test.seen.f1()) +
           '\t' + format_double(o.test.unseen.f1()) + '\t' + std::to_string(o.train.best_epoch) + "\n" +
           progress.str();
  };
  std::vector<std::string> results(configs.size());
  if (parallel) {
    out.flush();
    err.flush();
    std::vector<std::pair<pid_t, int>> children;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      int fds[2];
      if (pipe(fds) != 0) throw Error("sweep-lambda", "pipe failed");
      const pid_t pid = fork();
      if (pid < 0) throw Error("sweep-lambda", "fork failed");
      if (pid == 0) {
        close(fds[0]);
        std::string msg;
        int status = 0;
        try {
          msg = run_one(i);
        } catch (const std::exception& e) {
          msg = e.what();
          status = 1;
        }
        for (std::size_t done = 0; done < msg.size();) {
          const auto n = write(fds[1], msg.data() + done, msg.size() - done);
          if (n <= 0) break;
          done += static_cast<std::size_t>(n);
        }
        _exit(status);
      }
      close(fds[1]);
      children.emplace_back(pid, fds[0]);
    }
    std::string failure;
    for (std::size_t i = 0; i < children.size(); ++i) {
      auto& msg = results[i];
      char buf[4096];
      for (ssize_t n; (n = read(children[i].second, buf, sizeof buf)) > 0;) msg.append(buf, static_cast<std::size_t>(n));
      close(children[i].second);
      int status = 0;
      waitpid(children[i].first, &status, 0);
      if ((!WIFEXITED(status) || WEXITSTATUS(status) != 0) && failure.empty())
        failure = "lambda " + format_double(lambdas[i]) + ": " + (msg.empty() ? "run failed" : msg);
    }
    if (!failure.empty()) throw Error("sweep-lambda", failure);
  } else {
    for (std::size_t i = 0; i < configs.size(); ++i) results[i] = run_one(i);
  }
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto nl = results[i].find('\n');
    rows.push_back(results[i].substr(0, nl + 1));
    out << "lambda=" << format_double(lambdas[i]) << ": " << results[i].substr(nl + 1);
  }

  const auto dir = base.run_dir();
  fs::create_directories(dir);
  const auto tsv = dir / "lambda_sweep.tsv";
  std::ofstream f(tsv, std::ios::binary);
  if (!f) throw Error("sweep-lambda", "cannot write " + tsv.string());
  f << "lambda\tf1\tseen_f1\tunseen_f1\tbest_epoch\n";
  for (const auto& row : rows) f << row;
  out << "sweep table written to " << tsv.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot cross-domain slot filling with prototypical contrastive learning and label confusion",
               "pclc"};
  app.require_subcommand(1);
  app.footer(keys_help());

  CommonOptions train_opts, eval_opts, predict_opts, export_opts, sweep_opts;
  std::string checkpoint, report_path, input, output;
  std::vector<double> lambdas;
  bool parallel = false;

  auto* train = app.add_subcommand("train", "build the split, train, and write run artifacts");
  train_opts.attach(*train);

  auto* eval = app.add_subcommand("eval", "score a checkpoint on the target test split");
  eval_opts.attach(*eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint manifest (default <output_dir>/model.ckpt)");
  eval->add_option("--report", report_path, "key=value report path (default <checkpoint>.eval.kv)");

  auto* predict = app.add_subcommand("predict", "tag whitespace-tokenised utterances, one per line");
  predict_opts.attach(*predict);
  predict->add_option("--checkpoint", checkpoint, "checkpoint manifest (default <output_dir>/model.ckpt)");
  predict->add_option("-i,--input", input, "input file, '-' or omitted for stdin");
  predict->add_option("--out", output, "CoNLL output file (default stdout)");

  auto* sweep = app.add_subcommand("sweep-lambda", "train and evaluate once per lambda value");
  sweep_opts.attach(*sweep);
  sweep->add_option("--lambdas", lambdas, "comma-separated lambda values")->required()->delimiter(',');
  sweep->add_flag("--parallel", parallel, "run each value in its own process");

  auto* exp = app.add_subcommand("export-protos", "write the prototype matrix as TSV");
  export_opts.attach(*exp);
  exp->add_option("--checkpoint", checkpoint, "checkpoint manifest (default <output_dir>/model.ckpt)");
  exp->add_option("--out", output, "TSV path (default <output_dir>/prototypes.tsv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return cmd_train(train_opts.resolve(), out);
    if (*eval) return cmd_eval(eval_opts.resolve(), checkpoint, report_path, out);
    if (*predict) return cmd_predict(predict_opts.resolve(), checkpoint, input, output, out);
    if (*sweep) return cmd_sweep(sweep_opts.resolve(), lambdas, parallel, out, err);
    if (*exp) return cmd_export(export_opts.resolve(), checkpoint, output, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace pclc
