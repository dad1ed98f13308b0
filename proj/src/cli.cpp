#include "dan/cli.hpp"

#include "dan/csv.hpp"
#include "dan/network.hpp"
#include "dan/quantize.hpp"
#include "dan/serialize.hpp"
#include "dan/toybars.hpp"
#include "dan/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace dan {

namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

fs::path out_path(const GlobalOpts& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

int resolve_task(const DanNetwork& net, const std::string& spec) {
  for (int t = 0; t < net.task_count(); ++t)
    if (net.task_names[t] == spec) return t;
  try {
    const int t = std::stoi(spec);
    if (t >= 0 && t < net.task_count()) return t;
  } catch (const std::exception&) {
  }
  throw std::runtime_error("unknown task: " + spec);
}

Dataset load_concat(const std::vector<std::string>& paths,
                    bool relabel_by_file) {
  Dataset all;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    Dataset ds = load_bars(paths[i]);
    for (BarsExample& ex : ds.examples) {
      if (relabel_by_file) ex.label = static_cast<int>(i);
      all.examples.push_back(std::move(ex));
    }
  }
  return all;
}

void print_history_tail(const RunHistory& h) {
  if (h.epochs.empty()) return;
  const EpochStats& last = h.epochs.back();
  std::printf("epochs=%zu train_loss=%.4f train_acc=%.4f val_acc=%.4f\n",
              h.epochs.size(), last.train_loss, last.train_acc, last.val_acc);
}

MetricsTable history_table(const std::vector<RunHistory>& runs) {
  MetricsTable table;
  table.header = {"scenario", "trial", "epoch",
                  "train_loss", "train_acc", "val_acc"};
  for (const RunHistory& h : runs)
    for (std::size_t e = 0; e < h.epochs.size(); ++e)
      table.add_row({h.scenario, std::to_string(h.trial), std::to_string(e),
                     format_double(h.epochs[e].train_loss),
                     format_double(h.epochs[e].train_acc),
                     format_double(h.epochs[e].val_acc)});
  return table;
}

struct DeciderEvalResult {
  double decider_accuracy = 0.0;
  std::vector<double> task_accuracy;
  double end_to_end_accuracy = 0.0;
};

DeciderEvalResult evaluate_with_decider(DanNetwork& net, DanNetwork& decider,
                                        const std::vector<Dataset>& per_task) {
  const int n_tasks = net.task_count();
  if (static_cast<int>(per_task.size()) != n_tasks)
    throw std::runtime_error("need one dataset per task for decider eval");
  if (decider.heads.at(0).layers.back().w.dim(1) != n_tasks)
    throw std::runtime_error("decider output dim != task count");

  DeciderEvalResult result;
  result.task_accuracy.resize(n_tasks);
  for (int t = 0; t < n_tasks; ++t) {
    set_alpha(net, t);
    result.task_accuracy[t] = evaluate(net, per_task[t]);
  }

  int total = 0, decider_correct = 0, end_correct = 0;
  for (int t = 0; t < n_tasks; ++t) {
    for (int i = 0; i < per_task[t].size(); ++i) {
      Tensor image = per_task[t].batch_images({i});
      Tensor dec_logits = decider.forward(image, false);
      Eigen::VectorXd logits =
          Eigen::Map<const Eigen::VectorXd>(dec_logits.data().data(),
                                            dec_logits.size());
      Eigen::VectorXd alpha = select_alpha_from_decider(logits);
      AlphaSelector sel;
      sel.alphas = alpha;
      sel.binding = AlphaSelector::Binding::Decider;
      net.alpha = sel;

      const int routed = net.routed_task();
      if (routed == t) ++decider_correct;
      Tensor logits_cls = net.forward(image, false);
      Eigen::Index best;
      logits_cls.matrix().row(0).maxCoeff(&best);
      if (static_cast<int>(best) == per_task[t].examples[i].label)
        ++end_correct;
      ++total;
    }
  }
  result.decider_accuracy = static_cast<double>(decider_correct) / total;
  result.end_to_end_accuracy = static_cast<double>(end_correct) / total;
  return result;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Deep-adaptation incremental learning lab for the toy bars "
               "domains"};
  app.require_subcommand(1);

  GlobalOpts global;
  app.add_option("--seed", global.seed, "root RNG seed")
      ->capture_default_str();
  app.add_option("--out", global.out_dir, "output directory")
      ->capture_default_str();
  app.set_config("--config", "", "read option defaults from an INI file");

  // ---- gen-bars ------------------------------------------------------
  struct {
    std::string variant = "red-horizontal";
    int n = 1000;
    double split = 0.75;
    std::string stem;
  } gen;
  auto* gen_cmd = app.add_subcommand("gen-bars", "generate a bars dataset");
  gen_cmd->add_option("--variant", gen.variant,
                      "red-horizontal|red-vertical|green-horizontal")
      ->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "example count")->capture_default_str();
  gen_cmd->add_option("--split", gen.split, "train fraction")
      ->capture_default_str();
  gen_cmd->add_option("--stem", gen.stem,
                      "output file stem (default: the variant name)");
  gen_cmd->callback([&]() {
    BarsConfig cfg;
    cfg.variant = variant_from_name(gen.variant);
    cfg.n_examples = gen.n;
    cfg.split = gen.split;
    cfg.seed = global.seed;
    TrainTestSplit data = gen_bars(cfg);
    const std::string stem = gen.stem.empty() ? gen.variant : gen.stem;
    const fs::path train_path = out_path(global, stem + "-train.bars");
    const fs::path test_path = out_path(global, stem + "-test.bars");
    save_bars(data.train, train_path, cfg);
    save_bars(data.test, test_path, cfg);
    std::printf("wrote %s (%d) and %s (%d)\n", train_path.c_str(),
                data.train.size(), test_path.c_str(), data.test.size());
  });

  // ---- train-base ----------------------------------------------------
  struct {
    std::vector<std::string> train_files;
    std::vector<std::string> eval_files;
    int epochs = 50;
    int batch = 32;
    double lr = 1e-3;
    int classes = kBarClasses;
    bool domains = false;
    bool sgd = false;
    bool halve_lr = false;
    std::string model_out = "model.dan";
  } tb;
  auto* tb_cmd =
      app.add_subcommand("train-base", "train a fresh base network");
  tb_cmd->add_option("--train", tb.train_files, "training .bars file(s)")
      ->required();
  tb_cmd->add_option("--eval", tb.eval_files, "validation .bars file(s)");
  tb_cmd->add_option("--epochs", tb.epochs)->capture_default_str();
  tb_cmd->add_option("--batch", tb.batch)->capture_default_str();
  tb_cmd->add_option("--lr", tb.lr)->capture_default_str();
  tb_cmd->add_option("--classes", tb.classes, "head output width")
      ->capture_default_str();
  tb_cmd->add_flag("--domains", tb.domains,
                   "relabel by source file index (dataset-decider training)");
  tb_cmd->add_flag("--sgd", tb.sgd, "use SGD instead of Adam");
  tb_cmd->add_flag("--halve-lr", tb.halve_lr, "halve learning rate every 10 epochs");
  tb_cmd->add_option("--model-out", tb.model_out)->capture_default_str();
  tb_cmd->callback([&]() {
    const int classes =
        tb.domains ? static_cast<int>(tb.train_files.size()) : tb.classes;
    Rng rng(global.seed);
    DanNetwork net = toy_network(rng, classes);
    TrainTestSplit data;
    data.train = load_concat(tb.train_files, tb.domains);
    if (!tb.eval_files.empty())
      data.test = load_concat(tb.eval_files, tb.domains);
    TrainConfig cfg;
    cfg.opt.kind = tb.sgd ? OptimizerKind::Sgd : OptimizerKind::Adam;
    cfg.opt.learning_rate = tb.lr;
    cfg.opt.schedule = tb.halve_lr ? LrSchedule::HalveEvery10Epochs
                                   : LrSchedule::Constant;
    cfg.epochs = tb.epochs;
    cfg.batch_size = tb.batch;
    cfg.seed = global.seed + 1;
    RunHistory h = train(net, data, TrainMode::Scratch, cfg);
    print_history_tail(h);
    save_model(net, out_path(global, tb.model_out));
    std::printf("saved %s\n", out_path(global, tb.model_out).c_str());
  });

  // ---- attach --------------------------------------------------------
  struct {
    std::string model;
    std::string name = "task";
    std::string init = "diagonal";
    std::string mode = "linear";
    std::string target;
    std::string layers;
    std::string model_out;
  } at;
  auto* at_cmd =
      app.add_subcommand("attach", "add a controller bank for a new task");
  at_cmd->add_option("--model", at.model, "base model archive")->required();
  at_cmd->add_option("--name", at.name, "new task name")
      ->capture_default_str();
  at_cmd->add_option("--init", at.init, "diagonal|random|linear_approx")
      ->capture_default_str();
  at_cmd->add_option("--mode", at.mode, "linear|diagonal")
      ->capture_default_str();
  at_cmd->add_option("--target", at.target,
                     "independently trained model (linear_approx)");
  at_cmd->add_option("--layers", at.layers,
                     "comma list of controllable conv-layer indices "
                     "(first attach only; default: all)");
  at_cmd->add_option("--model-out", at.model_out,
                     "output archive (default: overwrite --model)");
  at_cmd->callback([&]() {
    DanNetwork net = load_model(at.model);
    if (!net.base_frozen) freeze_base(net);

    if (!at.layers.empty()) {
      if (net.task_count() > 1)
        throw std::runtime_error(
            "--layers may only be set before the first task is attached");
      std::vector<int> keep = parse_int_list(at.layers);
      int conv_index = 0;
      for (Layer& layer : net.features)
        if (auto* conv = std::get_if<ConvLayer>(&layer)) {
          conv->controllable =
              std::find(keep.begin(), keep.end(), conv_index) != keep.end();
          ++conv_index;
        }
    }

    AttachOptions opts;
    if (at.init == "diagonal") opts.scheme = InitScheme::Diagonal;
    else if (at.init == "random") opts.scheme = InitScheme::Random;
    else if (at.init == "linear_approx") opts.scheme = InitScheme::LinearApprox;
    else throw std::runtime_error("unknown init scheme: " + at.init);
    if (at.mode == "linear") opts.mode = ControllerMode::Linear;
    else if (at.mode == "diagonal") opts.mode = ControllerMode::Diagonal;
    else throw std::runtime_error("unknown controller mode: " + at.mode);

    Rng rng(global.seed);
    opts.rng = &rng;
    DanNetwork target;
    if (opts.scheme == InitScheme::LinearApprox) {
      if (at.target.empty())
        throw std::runtime_error("linear_approx requires --target");
      target = load_model(at.target);
      opts.target = &target;
    }
    const int task = attach_task(net, at.name, opts);
    const std::string dest = at.model_out.empty() ? at.model : at.model_out;
    save_model(net, dest);
    std::printf("attached task %d (%s) -> %s\n", task, at.name.c_str(),
                dest.c_str());
  });

  // ---- train-task ----------------------------------------------------
  struct {
    std::string model;
    std::string task;
    std::vector<std::string> train_files;
    std::vector<std::string> eval_files;
    std::string mode = "dan-linear";
    int epochs = 50;
    int batch = 32;
    double lr = 1e-3;
    std::string model_out;
  } tt;
  auto* tt_cmd =
      app.add_subcommand("train-task", "train one task of a DAN model");
  tt_cmd->add_option("--model", tt.model)->required();
  tt_cmd->add_option("--task", tt.task, "task name or index")->required();
  tt_cmd->add_option("--train", tt.train_files)->required();
  tt_cmd->add_option("--eval", tt.eval_files);
  tt_cmd->add_option("--mode", tt.mode,
                     "dan-linear|dan-diagonal|ft-last|ft-full|"
                     "ft-full-bn-off|scratch")
      ->capture_default_str();
  tt_cmd->add_option("--epochs", tt.epochs)->capture_default_str();
  tt_cmd->add_option("--batch", tt.batch)->capture_default_str();
  tt_cmd->add_option("--lr", tt.lr)->capture_default_str();
  tt_cmd->add_option("--model-out", tt.model_out,
                     "output archive (default: overwrite --model)");
  tt_cmd->callback([&]() {
    DanNetwork net = load_model(tt.model);
    set_alpha(net, resolve_task(net, tt.task));
    TrainTestSplit data;
    data.train = load_concat(tt.train_files, false);
    if (!tt.eval_files.empty()) data.test = load_concat(tt.eval_files, false);
    TrainConfig cfg;
    cfg.opt.learning_rate = tt.lr;
    cfg.epochs = tt.epochs;
    cfg.batch_size = tt.batch;
    cfg.seed = global.seed + 1;
    RunHistory h = train(net, data, train_mode_from_name(tt.mode), cfg);
    print_history_tail(h);
    const std::string dest = tt.model_out.empty() ? tt.model : tt.model_out;
    save_model(net, dest);
    std::printf("saved %s\n", dest.c_str());
  });

  // ---- eval ----------------------------------------------------------
  struct {
    std::string model;
    std::vector<std::string> data_files;
    std::string task;
    std::string decider;
    std::string out_file;
  } ev;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate a model");
  ev_cmd->add_option("--model", ev.model)->required();
  ev_cmd->add_option("--data", ev.data_files,
                     "one file (--task) or one per task (--decider)")
      ->required();
  ev_cmd->add_option("--task", ev.task, "task name or index");
  ev_cmd->add_option("--decider", ev.decider, "decider model archive");
  ev_cmd->add_option("--out-file", ev.out_file, "write metrics CSV here");
  ev_cmd->callback([&]() {
    DanNetwork net = load_model(ev.model);
    MetricsTable table;
    table.header = {"metric", "value"};
    if (!ev.decider.empty()) {
      DanNetwork decider = load_model(ev.decider);
      std::vector<Dataset> per_task;
      for (const std::string& f : ev.data_files)
        per_task.push_back(load_bars(f));
      DeciderEvalResult r = evaluate_with_decider(net, decider, per_task);
      std::printf("decider_accuracy=%.6f\n", r.decider_accuracy);
      for (std::size_t t = 0; t < r.task_accuracy.size(); ++t)
        std::printf("task%zu_accuracy=%.6f\n", t, r.task_accuracy[t]);
      std::printf("end_to_end_accuracy=%.6f\n", r.end_to_end_accuracy);
      table.add_row({"decider_accuracy", format_double(r.decider_accuracy)});
      for (std::size_t t = 0; t < r.task_accuracy.size(); ++t)
        table.add_row({"task" + std::to_string(t) + "_accuracy",
                       format_double(r.task_accuracy[t])});
      table.add_row(
          {"end_to_end_accuracy", format_double(r.end_to_end_accuracy)});
    } else {
      if (!ev.task.empty()) set_alpha(net, resolve_task(net, ev.task));
      Dataset ds = load_concat(ev.data_files, false);
      const double acc = evaluate(net, ds);
      std::printf("accuracy=%.6f\n", acc);
      table.add_row({"accuracy", format_double(acc)});
    }
    if (!ev.out_file.empty())
      emit_metrics(table, out_path(global, ev.out_file));
  });

  // ---- scenario ------------------------------------------------------
  struct {
    std::string name;
    int trials = 20;
    int epochs = 50;
  } sc;
  auto* sc_cmd =
      app.add_subcommand("scenario", "run a named toy bars scenario");
  sc_cmd->add_option("name", sc.name, "scenario name")->required();
  sc_cmd->add_option("--trials", sc.trials)->capture_default_str();
  sc_cmd->add_option("--epochs", sc.epochs)->capture_default_str();
  sc_cmd->callback([&]() {
    ScenarioSpec spec = scenario_setup(sc.name);
    spec.trials = sc.trials;
    spec.epochs = sc.epochs;
    TrialAggregate agg = run_trials(spec, global.seed);
    MetricsTable table = history_table(agg.trials);
    const fs::path csv = out_path(global, "scenario-" + spec.name + ".csv");
    emit_metrics(table, csv);

    std::ofstream hdr(out_path(global, "scenario-" + spec.name + ".cfg"));
    hdr << "scenario=" << spec.name << "\n"
        << "variant=" << variant_name(spec.variant) << "\n"
        << "trials=" << spec.trials << "\n"
        << "epochs=" << spec.epochs << "\n"
        << "seed=" << global.seed << "\n"
        << "optimizer=adam\n"
        << "learning_rate=" << format_double(spec.learning_rate) << "\n"
        << "batch_size=" << spec.batch_size << "\n"
        << "n_examples=" << spec.n_examples << "\n"
        << "split=" << format_double(spec.split) << "\n"
        << "noise_sigma=" << format_double(spec.noise_sigma) << "\n";

    std::printf("%s: final val acc mean=%.4f min=%.4f max=%.4f -> %s\n",
                spec.name.c_str(), agg.final_mean, agg.final_min,
                agg.final_max, csv.c_str());
  });

  // ---- cost ----------------------------------------------------------
  struct {
    std::string model;
    int co = 0, ci = 0, k = 0;
    int tasks = 10;
    double increment = -1.0;
    int bits = 0;
    std::string mode = "linear";
  } co;
  auto* co_cmd = app.add_subcommand("cost", "parameter-cost report");
  co_cmd->add_option("--model", co.model, "model archive to account");
  co_cmd->add_option("--co", co.co, "synthetic layer: output channels");
  co_cmd->add_option("--ci", co.ci, "synthetic layer: input channels");
  co_cmd->add_option("--k", co.k, "synthetic layer: kernel size");
  co_cmd->add_option("--tasks", co.tasks)->capture_default_str();
  co_cmd->add_option("--increment", co.increment,
                     "per-task increment for pure amortization arithmetic");
  co_cmd->add_option("--bits", co.bits,
                     "also report the quantized storage increment");
  co_cmd->add_option("--mode", co.mode, "linear|diagonal")
      ->capture_default_str();
  co_cmd->callback([&]() {
    double increment = co.increment;
    if (!co.model.empty()) {
      DanNetwork net = load_model(co.model);
      CostReport report = parameter_cost(
          net, co.tasks,
          co.mode == "diagonal" ? ControllerMode::Diagonal
                                : ControllerMode::Linear);
      for (const LayerCost& lc : report.layers) {
        std::printf("%s: Co=%d D=%d ratio=%.6f%s\n", lc.layer.c_str(),
                    lc.c_o, lc.d, lc.ratio,
                    lc.cost_warning ? "  [warning: Co >= D, controller adds "
                                      "more parameters than it reuses]"
                                    : "");
      }
      std::printf("base_params=%lld\n",
                  static_cast<long long>(report.base_params));
      std::printf("per_task_new_params=%lld\n",
                  static_cast<long long>(report.per_task_new_params));
      std::printf("per_task_increment=%.6f\n", report.per_task_increment);
      std::printf("tasks=%d total_multiple=%.6f amortized_per_task=%.6f\n",
                  report.tasks, report.total_multiple,
                  report.amortized_per_task);
      increment = report.per_task_increment;
    }
    if (co.co > 0 && co.ci > 0 && co.k > 0) {
      LayerCost lc = layer_cost(co.co, co.ci, co.k);
      std::printf("synthetic layer: Co=%d D=%d ratio=%.6f%s\n", lc.c_o, lc.d,
                  lc.ratio,
                  lc.cost_warning ? "  [warning: Co >= D, controller adds "
                                    "more parameters than it reuses]"
                                  : "");
    }
    if (co.increment >= 0.0) {
      const double total = 1.0 + co.increment * (co.tasks - 1);
      std::printf("tasks=%d increment=%.6f total_multiple=%.6f "
                  "amortized_per_task=%.6f\n",
                  co.tasks, co.increment, total, total / co.tasks);
    }
    if (co.bits > 0) {
      if (increment < 0.0)
        throw std::runtime_error(
            "--bits needs --increment or --model to know the increment");
      std::printf("quantized_increment(bits=%d)=%.6f\n", co.bits,
                  quantized_increment(increment, co.bits));
    }
    if (co.model.empty() && co.increment < 0.0 &&
        !(co.co > 0 && co.ci > 0 && co.k > 0))
      throw std::runtime_error(
          "cost: pass --model, --increment, or --co/--ci/--k");
  });

  // ---- quantize ------------------------------------------------------
  struct {
    std::string model;
    std::vector<std::string> data_files;
    std::string bits = "4,6,8,16,32";
    std::string task;
    bool include_bn = false;
    std::string out_file = "quantize.csv";
  } qz;
  auto* qz_cmd =
      app.add_subcommand("quantize", "accuracy-vs-bits quantization sweep");
  qz_cmd->add_option("--model", qz.model)->required();
  qz_cmd->add_option("--data", qz.data_files)->required();
  qz_cmd->add_option("--bits", qz.bits, "comma list from {4,6,8,16,32}")
      ->capture_default_str();
  qz_cmd->add_option("--task", qz.task, "task name or index");
  qz_cmd->add_flag("--include-bn", qz.include_bn,
                   "quantize batch-norm coefficients too");
  qz_cmd->add_option("--out-file", qz.out_file)->capture_default_str();
  qz_cmd->callback([&]() {
    DanNetwork net = load_model(qz.model);
    if (!qz.task.empty()) set_alpha(net, resolve_task(net, qz.task));
    Dataset ds = load_concat(qz.data_files, false);
    std::vector<int> bits_list = parse_int_list(qz.bits);
    for (int b : bits_list)
      if (!valid_quant_bits(b))
        throw std::runtime_error("unsupported bit width " +
                                 std::to_string(b));
    auto rows = accuracy_vs_bits(net, ds, bits_list, !qz.include_bn);
    MetricsTable table;
    table.header = {"bits", "accuracy", "total_param_bits"};
    for (const BitsAccuracyRow& row : rows) {
      table.add_row({std::to_string(row.bits), format_double(row.accuracy),
                     std::to_string(row.total_param_bits)});
      std::printf("bits=%d accuracy=%.6f total_param_bits=%lld\n", row.bits,
                  row.accuracy, static_cast<long long>(row.total_param_bits));
    }
    emit_metrics(table, out_path(global, qz.out_file));
  });

  // ---- interp --------------------------------------------------------
  struct {
    std::string model;
    std::string task_a = "0";
    std::string task_b = "1";
    std::string data_a;
    std::string data_b;
    std::string alphas = "0,0.25,0.5,0.75,1";
    std::string out_file = "interp.csv";
  } ip;
  auto* ip_cmd = app.add_subcommand(
      "interp", "sweep real-valued alpha between two tasks");
  ip_cmd->add_option("--model", ip.model)->required();
  ip_cmd->add_option("--task-a", ip.task_a)->capture_default_str();
  ip_cmd->add_option("--task-b", ip.task_b)->capture_default_str();
  ip_cmd->add_option("--data-a", ip.data_a, "task A labeled dataset")
      ->required();
  ip_cmd->add_option("--data-b", ip.data_b, "task B labeled dataset")
      ->required();
  ip_cmd->add_option("--alphas", ip.alphas)->capture_default_str();
  ip_cmd->add_option("--out-file", ip.out_file)->capture_default_str();
  ip_cmd->callback([&]() {
    DanNetwork net = load_model(ip.model);
    const int a = resolve_task(net, ip.task_a);
    const int b = resolve_task(net, ip.task_b);
    Dataset ds_a = load_bars(ip.data_a);
    Dataset ds_b = load_bars(ip.data_b);
    MetricsTable table;
    table.header = {"alpha", "acc_task_a", "acc_task_b"};
    for (double alpha : parse_double_list(ip.alphas)) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(net.task_count());
      v[a] = 1.0 - alpha;
      v[b] = alpha;
      set_alpha(net, v);
      const double acc_a = evaluate(net, ds_a);
      const double acc_b = evaluate(net, ds_b);
      table.add_row({format_double(alpha), format_double(acc_a),
                     format_double(acc_b)});
      std::printf("alpha=%.3f acc_a=%.6f acc_b=%.6f\n", alpha, acc_a, acc_b);
    }
    emit_metrics(table, out_path(global, ip.out_file));
  });

  // Build argv for CLI11 (it parses argc/argv order natively).
  std::vector<const char*> argv;
  argv.push_back("dan");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()),
              const_cast<char**>(argv.data()));
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << app.help();
    return 1;
  } catch (const ArchiveError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace dan
