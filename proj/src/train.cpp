#include "ocrseg/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace ocrseg {

using json = nlohmann::ordered_json;

namespace {

std::string fixed(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : k_(num_classes), m_(num_classes, std::vector<std::int64_t>(num_classes, 0)) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::span<const std::int32_t> pred, const LabelMap& truth, std::int32_t ignore_index) {
  if (pred.size() != truth.size()) {
    throw DimensionError("confusion matrix: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::int32_t t = truth.labels[i];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= k_) throw DataError("label " + std::to_string(t) + " out of range");
    if (pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= k_) {
      throw DataError("prediction " + std::to_string(pred[i]) + " out of range");
    }
    ++m_[static_cast<std::size_t>(t)][static_cast<std::size_t>(pred[i])];
    ++total_;
  }
}

EvalResult ConfusionMatrix::result() const {
  if (total_ == 0) throw DataError("evaluation set is empty or every pixel is ignored");
  EvalResult r;
  r.confusion = m_;
  r.class_iou.assign(k_, 0.0);
  r.class_present.assign(k_, false);
  std::int64_t correct = 0;
  double iou_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    const std::int64_t tp = m_[c][c];
    std::int64_t fn = 0, fp = 0;
    for (std::size_t o = 0; o < k_; ++o) {
      if (o == c) continue;
      fn += m_[c][o];
      fp += m_[o][c];
    }
    correct += tp;
    const std::int64_t uni = tp + fp + fn;
    if (uni > 0) {
      r.class_present[c] = true;
      r.class_iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += r.class_iou[c];
      ++present;
    }
  }
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total_);
  r.mean_iou = iou_sum / static_cast<double>(present);
  return r;
}

std::vector<std::int32_t> argmax_labels(const Tensor<double>& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax_labels: expected [K x H x W], got " + shape_str(logits.shape()));
  const std::size_t K = logits.dim(0), N = logits.dim(1) * logits.dim(2);
  const auto d = logits.data();
  std::vector<std::int32_t> out(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (d[k * N + i] > d[best * N + i]) best = k;
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

Dataset make_train_set(const RunConfig& cfg) {
  return generate_dataset(cfg.scene_config(), cfg.train_scenes, cfg.data_seed);
}

Dataset make_eval_set(const RunConfig& cfg) {
  return generate_dataset(cfg.scene_config(), cfg.eval_scenes, cfg.data_seed ^ 0xE7A1E7A1E7A1ULL);
}

std::vector<Tensor<double>> lift_dataset(const Dataset& data, const FeatureStem& stem) {
  std::vector<Tensor<double>> out;
  out.reserve(data.size());
  for (const auto& img : data.images) out.push_back(stem.lift(img));
  return out;
}

SegModel<double> init_model(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  return SegModel<double>::init(cfg.model_config(), rng);
}

TrainResult train_model(const RunConfig& cfg, const Dataset& train) {
  cfg.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  const auto feats = lift_dataset(train, FeatureStem(cfg.feat_channels, cfg.lift_seed));
  for (const auto& l : train.labels) l.validate(cfg.classes);

  Rng rng(cfg.seed);
  TrainResult res{SegModel<double>::init(cfg.model_config(), rng), {}};
  Rng order_rng = rng.fork(0x5eed);
  const bool needs_labels = cfg.effective_module() == ModuleKind::gt_ocr;
  const LossConfig lc = cfg.loss_config();
  const PolySchedule sched = cfg.schedule();

  std::vector<Tensor<double>> params = res.model.learnable();
  std::vector<std::vector<double>> velocity;
  for (auto& p : params) {
    p.set_requires_grad(true);
    velocity.emplace_back(p.numel(), 0.0);
  }

  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double lr = poly_lr(sched, it);
    GradTape<double> tape;
    Tensor<double> loss;
    TrainLogRow row;
    row.iter = it;
    row.lr = lr;
    try {
      TapeScope<double> scope(tape);
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const std::size_t idx = next_index();
        auto pred = res.model.forward(feats[idx], needs_labels ? &train.labels[idx] : nullptr);
        auto cl = combined_loss(pred.logits, pred.aux_logits, train.labels[idx], lc);
        loss = b == 0 ? cl.total : add(loss, cl.total);
        row.final_ce += cl.final_ce / static_cast<double>(cfg.batch);
        row.aux_ce += cl.aux_ce / static_cast<double>(cfg.batch);
      }
      loss = scale(loss, 1.0 / static_cast<double>(cfg.batch));
    } catch (const DataError& e) {
      // Inputs are finite, so after an update this means the weights overflowed.
      if (it == 0) throw;
      throw DivergenceError("forward pass failed at iteration " + std::to_string(it) + " (lr " + fixed(lr, 8) +
                            "): " + e.what() + "; lower base_lr");
    }
    row.loss = loss.item();
    if (!std::isfinite(row.loss)) {
      throw DivergenceError("loss became " + fixed(row.loss) + " at iteration " + std::to_string(it) + " (lr " +
                            fixed(lr, 8) + ", final ce " + fixed(row.final_ce) + ", aux ce " + fixed(row.aux_ce) +
                            "); lower base_lr");
    }
    backward(loss, tape);
    bool finite = true;
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto data = params[p].mutable_data();
      auto& v = velocity[p];
      const bool has = params[p].has_grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = (has ? params[p].grad()[i] : 0.0) + cfg.weight_decay * data[i];
        v[i] = cfg.momentum * v[i] + g;
        data[i] -= lr * v[i];
        finite = finite && std::isfinite(data[i]);
      }
      params[p].zero_grad();
    }
    if (!finite) {
      throw DivergenceError("weights became non-finite at iteration " + std::to_string(it) + " (lr " + fixed(lr, 8) +
                            ", loss " + fixed(row.loss) + "); lower base_lr");
    }
    res.log.push_back(row);
  }
  for (auto& p : params) p.set_requires_grad(false);
  return res;
}

EvalResult evaluate_model(const SegModel<double>& model, const Dataset& data, const RunConfig& cfg) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  const FeatureStem stem(cfg.feat_channels, cfg.lift_seed);
  const bool needs_labels = model.config().kind == ModuleKind::gt_ocr;
  ConfusionMatrix cm(model.config().num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LabelMap& truth = data.labels[i];
    auto pred = model.forward(stem.lift(data.images[i]), needs_labels ? &truth : nullptr);
    const auto labels = argmax_labels(pred.logits);
    cm.add(labels, truth);
  }
  return cm.result();
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "iter,lr,loss,final_ce,aux_ce\n";
  for (const auto& r : log) {
    out += std::to_string(r.iter) + "," + fixed(r.lr, 8) + "," + fixed(r.loss, 8) + "," + fixed(r.final_ce, 8) + "," +
           fixed(r.aux_ce, 8) + "\n";
  }
  return out;
}

std::string eval_json(const EvalResult& r) {
  json j;
  j["pixel_accuracy"] = r.pixel_accuracy;
  j["mean_iou"] = r.mean_iou;
  json iou = json::array();
  for (std::size_t c = 0; c < r.class_iou.size(); ++c) {
    if (r.class_present[c]) {
      iou.push_back(r.class_iou[c]);
    } else {
      iou.push_back(nullptr);
    }
  }
  j["class_iou"] = iou;
  j["confusion"] = r.confusion;
  return j.dump(2) + "\n";
}

std::string checkpoint_json(const RunConfig& cfg, SegModel<double>& model) {
  json j;
  json c = json::object();
  std::istringstream is(cfg.to_text());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    c[line.substr(0, eq)] = line.substr(eq + 1);
  }
  j["config"] = c;
  json tensors = json::array();
  model.visit([&](const std::string& name, Tensor<double>& t, bool learnable) {
    json e;
    e["name"] = name;
    e["learnable"] = learnable;
    e["shape"] = t.shape();
    e["data"] = std::vector<double>(t.data().begin(), t.data().end());
    tensors.push_back(e);
  });
  j["tensors"] = tensors;
  return j.dump(1) + "\n";
}

Checkpoint load_checkpoint(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.contains("config") || !j.contains("tensors")) throw DataError("checkpoint lacks config or tensors");
  RunConfig cfg;
  for (const auto& [k, v] : j["config"].items()) {
    if (!v.is_string()) throw DataError("checkpoint config value for " + k + " is not a string");
    cfg.set(k, v.get<std::string>());
  }
  Checkpoint ck{cfg, init_model(cfg)};
  std::map<std::string, const json*> by_name;
  for (const auto& e : j["tensors"]) by_name[e.at("name").get<std::string>()] = &e;
  ck.model.visit([&](const std::string& name, Tensor<double>& t, bool) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint lacks tensor " + name);
    const auto shape = it->second->at("shape").get<Shape>();
    if (shape != t.shape()) throw DataError("checkpoint tensor " + name + " has shape " + shape_str(shape));
    const auto values = it->second->at("data").get<std::vector<double>>();
    if (values.size() != t.numel()) throw DataError("checkpoint tensor " + name + " has wrong length");
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  });
  if (by_name.size() != ck.model.named_tensors().size()) throw DataError("checkpoint has unexpected extra tensors");
  return ck;
}

double AblationCell::mean_miou() const {
  double s = 0.0;
  for (double v : miou) {
    if (std::isnan(v)) return std::numeric_limits<double>::quiet_NaN();
    s += v;
  }
  return miou.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(miou.size());
}

namespace {

const AblationCell& find_cell(const AblationResult& r, bool aux, RelationScheme s) {
  for (const auto& c : r.cells)
    if (c.aux == aux && c.scheme == s) return c;
  throw ContractError("ablation cell missing");
}

// a >= b on a strict majority of seeds; failed runs count against.
Verdict majority(const std::string& name, const AblationCell& a, const AblationCell& b) {
  std::size_t wins = 0;
  std::string detail;
  for (std::size_t i = 0; i < a.seeds.size(); ++i) {
    const bool ok = !std::isnan(a.miou[i]) && !std::isnan(b.miou[i]) && a.miou[i] >= b.miou[i];
    wins += ok;
    detail += (i ? "; " : "") + std::string("seed ") + std::to_string(a.seeds[i]) + ": " + fixed(a.miou[i], 4) +
              (ok ? " >= " : " < ") + fixed(b.miou[i], 4);
  }
  Verdict v;
  v.name = name;
  v.passed = 2 * wins > a.seeds.size();
  v.detail = std::to_string(wins) + "/" + std::to_string(a.seeds.size()) + " seeds (" + detail + ")";
  return v;
}

}  // namespace

AblationResult run_ablation(const RunConfig& cfg, const Dataset& train, const Dataset& eval) {
  cfg.validate();
  AblationResult r;
  for (bool aux : {true, false}) {
    for (RelationScheme scheme : {RelationScheme::ocr, RelationScheme::da, RelationScheme::acf}) {
      AblationCell cell;
      cell.aux = aux;
      cell.scheme = scheme;
      for (std::size_t s = 0; s < cfg.ablate_seeds; ++s) {
        RunConfig c = cfg;
        c.module = ModuleKind::ocr;
        c.relation_scheme = scheme;
        c.aux = aux;
        c.seed = cfg.seed + s;
        cell.seeds.push_back(c.seed);
        try {
          TrainResult t = train_model(c, train);
          EvalResult e = evaluate_model(t.model, eval, c);
          cell.miou.push_back(e.mean_iou);
          cell.pixel_accuracy.push_back(e.pixel_accuracy);
          cell.errors.emplace_back();
        } catch (const std::exception& ex) {
          cell.miou.push_back(std::numeric_limits<double>::quiet_NaN());
          cell.pixel_accuracy.push_back(std::numeric_limits<double>::quiet_NaN());
          cell.errors.emplace_back(ex.what());
        }
      }
      r.cells.push_back(std::move(cell));
    }
  }
  r.verdicts.push_back(majority("supervision: with >= without",
                                find_cell(r, true, RelationScheme::ocr), find_cell(r, false, RelationScheme::ocr)));
  r.verdicts.push_back(majority("scheme: ocr >= acf",
                                find_cell(r, true, RelationScheme::ocr), find_cell(r, true, RelationScheme::acf)));
  r.reported.push_back(majority("scheme: ocr >= da",
                                find_cell(r, true, RelationScheme::ocr), find_cell(r, true, RelationScheme::da)));
  return r;
}

std::string ablation_csv(const AblationResult& r) {
  std::string out = "aux,scheme,seeds,miou_mean,miou_per_seed,pixel_acc_mean,errors\n";
  for (const auto& c : r.cells) {
    std::string seeds, per, errs;
    double acc = 0.0;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      seeds += (i ? ";" : "") + std::to_string(c.seeds[i]);
      per += (i ? ";" : "") + fixed(c.miou[i]);
      acc += c.pixel_accuracy[i];
      if (!c.errors[i].empty()) {
        std::string e = c.errors[i];
        for (auto& ch : e)
          if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
        errs += (errs.empty() ? "" : ";") + e;
      }
    }
    out += std::string(c.aux ? "on" : "off") + "," + to_string(c.scheme) + "," + seeds + "," + fixed(c.mean_miou()) +
           "," + per + "," + fixed(acc / static_cast<double>(c.seeds.size())) + "," + errs + "\n";
  }
  return out;
}

std::string ablation_table_csv(const AblationResult& r) {
  std::string out = "aux_off,aux_on,da,acf,ocr\n";
  out += fixed(find_cell(r, false, RelationScheme::ocr).mean_miou()) + "," +
         fixed(find_cell(r, true, RelationScheme::ocr).mean_miou()) + "," +
         fixed(find_cell(r, true, RelationScheme::da).mean_miou()) + "," +
         fixed(find_cell(r, true, RelationScheme::acf).mean_miou()) + "," +
         fixed(find_cell(r, true, RelationScheme::ocr).mean_miou()) + "\n";
  return out;
}

std::string ablation_json(const AblationResult& r) {
  auto verdicts = [](const std::vector<Verdict>& vs) {
    json a = json::array();
    for (const auto& v : vs) a.push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
    return a;
  };
  json j;
  json cells = json::array();
  for (const auto& c : r.cells) {
    json m = json::array();
    for (double v : c.miou) m.push_back(std::isnan(v) ? json(nullptr) : json(v));
    cells.push_back({{"aux", c.aux}, {"scheme", to_string(c.scheme)}, {"seeds", c.seeds}, {"miou", m},
                     {"errors", c.errors}});
  }
  j["cells"] = cells;
  j["verdicts"] = verdicts(r.verdicts);
  j["reported"] = verdicts(r.reported);
  return j.dump(2) + "\n";
}

}  // namespace ocrseg
