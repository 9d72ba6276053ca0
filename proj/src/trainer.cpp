#include "adaforge/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "adaforge/checkpoint.hpp"
#include "adaforge/hashing.hpp"
#include "adaforge/losses.hpp"
#include "adaforge/routing.hpp"

namespace adaforge {

void clip_gradients(const std::vector<Tensor*>& grads, double max_norm) {
  if (max_norm <= 0.0)
    throw std::invalid_argument("clip_gradients: max_norm must be > 0");
  double sq = 0.0;
  for (const Tensor* g : grads)
    for (int64_t i = 0; i < g->numel(); ++i) {
      const double v = (*g)[static_cast<size_t>(i)];
      sq += v * v;
    }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (Tensor* g : grads)
    for (int64_t i = 0; i < g->numel(); ++i) (*g)[static_cast<size_t>(i)] *= scale;
}

namespace {

Tensor rows_slice(const Tensor& inputs, int64_t from, int64_t count) {
  const int64_t n = inputs.shape.dim(0);
  const int64_t block = inputs.numel() / n;
  std::vector<int64_t> dims = inputs.shape.dims();
  dims[0] = count;
  Tensor out{Shape{dims}};
  std::copy(inputs.data() + from * block, inputs.data() + (from + count) * block,
            out.data());
  return out;
}

/// AP with items ranked by descending score (stable on ties): the mean of
/// precision-at-k over the positive items.
double average_precision(std::vector<std::pair<double, int>>& scored) {
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  int64_t pos_seen = 0;
  double acc = 0.0;
  for (size_t k = 0; k < scored.size(); ++k)
    if (scored[k].second) {
      ++pos_seen;
      acc += static_cast<double>(pos_seen) / static_cast<double>(k + 1);
    }
  return pos_seen ? acc / static_cast<double>(pos_seen) : 0.0;
}

constexpr int64_t kEvalChunk = 100;

}  // namespace

EvalResult evaluate(const SplitModel& model, const Tensor& inputs,
                    const std::vector<int64_t>& labels) {
  const int64_t n = inputs.shape.dim(0);
  if (n == 0 || labels.empty())
    throw std::invalid_argument("evaluate: empty dataset");
  NoGradGuard ng;
  EvalResult res;
  res.segmentation = model.spec.head_kind == HeadKind::Segmenter;

  if (!res.segmentation) {
    const int64_t c = model.spec.num_classes;
    int64_t hits = 0;
    for (int64_t at = 0; at < n; at += kEvalChunk) {
      const int64_t b = std::min(kEvalChunk, n - at);
      const Tensor scores =
          model.predict(Value::constant(rows_slice(inputs, at, b))).data();
      for (int64_t i = 0; i < b; ++i) {
        int64_t best = 0;
        for (int64_t k = 1; k < c; ++k)
          if (scores[static_cast<size_t>(i * c + k)] >
              scores[static_cast<size_t>(i * c + best)])
            best = k;
        if (best == labels[static_cast<size_t>(at + i)]) ++hits;
      }
    }
    res.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    return res;
  }

  // Segmentation: per-pixel accuracy plus two-class mAP from the free-space
  // probability sigmoid(z1 - z0).
  const int64_t px = inputs.numel() / (n * inputs.shape.dim(1));
  int64_t hits = 0;
  std::vector<std::pair<double, int>> pos_scored, neg_scored;
  pos_scored.reserve(static_cast<size_t>(n * px));
  neg_scored.reserve(static_cast<size_t>(n * px));
  for (int64_t at = 0; at < n; at += kEvalChunk) {
    const int64_t b = std::min(kEvalChunk, n - at);
    const Tensor scores =
        model.predict(Value::constant(rows_slice(inputs, at, b))).data();
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < px; ++j) {
        const double z0 = scores[static_cast<size_t>((i * 2 + 0) * px + j)];
        const double z1 = scores[static_cast<size_t>((i * 2 + 1) * px + j)];
        const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
        const int y = static_cast<int>(labels[static_cast<size_t>((at + i) * px + j)]);
        if ((p1 > 0.5) == (y == 1)) ++hits;
        pos_scored.emplace_back(p1, y == 1 ? 1 : 0);
        neg_scored.emplace_back(1.0 - p1, y == 0 ? 1 : 0);
      }
  }
  res.accuracy = static_cast<double>(hits) / static_cast<double>(n * px);
  res.map = 0.5 * (average_precision(pos_scored) + average_precision(neg_scored));
  return res;
}

double discriminator_accuracy(const SplitModel& model, const Tensor& source_inputs,
                              const Tensor& target_inputs) {
  NoGradGuard ng;
  int64_t hits = 0, total = 0;
  const auto tally = [&](const Tensor& inputs, bool is_source) {
    const int64_t n = inputs.shape.dim(0);
    for (int64_t at = 0; at < n; at += kEvalChunk) {
      const int64_t b = std::min(kEvalChunk, n - at);
      const Value f = model.forward_encoder(Value::constant(rows_slice(inputs, at, b)));
      const Tensor d = model.forward_disc(f).data();
      for (int64_t i = 0; i < d.numel(); ++i) {
        const bool says_source = d[static_cast<size_t>(i)] > 0.5;
        if (says_source == is_source) ++hits;
        ++total;
      }
    }
  };
  tally(source_inputs, true);
  tally(target_inputs, false);
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

/// Supervised-only gradients (warmup path and source-only baselines): fills
/// encoder and task entries of `grads`, leaves discriminator entries zero.
double supervised_grads(const SplitModel& model, const Tensor& xb,
                        const std::vector<int64_t>& yb, std::vector<Tensor>& grads) {
  zero_grad(model.params);
  Value loss = supervised_loss(model.predict(Value::constant(xb)), yb);
  const double value = loss.item();
  backward(loss);
  for (size_t i = 0; i < model.params.size(); ++i) {
    const Tensor& g = model.params[i].value.grad();
    for (int64_t j = 0; j < g.numel(); ++j)
      grads[i][static_cast<size_t>(j)] = g[static_cast<size_t>(j)];
  }
  zero_grad(model.params);
  return value;
}

/// One discriminator-only update on detached features (the extra steps of
/// disc_steps_per_encoder_step > 1). Returns the (unscaled) L_AD value.
double disc_only_grads(const SplitModel& model, const Tensor& x_src,
                       const Tensor& x_tgt, double lambda_d,
                       std::vector<Tensor>& grads) {
  Tensor f_s, f_t;
  {
    NoGradGuard ng;
    f_s = model.forward_encoder(Value::constant(x_src)).data();
    f_t = model.forward_encoder(Value::constant(x_tgt)).data();
  }
  zero_grad(model.params);
  const Value d_s = model.forward_disc(Value::constant(f_s));
  const Value d_t = model.forward_disc(Value::constant(f_t));
  const Value lad = model.spec.patch_discriminator
                        ? patch_discriminator_loss(d_s, d_t)
                        : discriminator_loss(d_s, d_t);
  const double value = lad.item();
  backward(lad);
  for (size_t i = 0; i < model.params.size(); ++i) {
    if (model.params[i].group != ParamGroup::Discriminator) continue;
    const Tensor& g = model.params[i].value.grad();
    for (int64_t j = 0; j < g.numel(); ++j)
      grads[i][static_cast<size_t>(j)] = lambda_d * g[static_cast<size_t>(j)];
  }
  zero_grad(model.params);
  return value;
}

void clip_and_apply(SplitModel& model, std::vector<Tensor>& grads,
                    const AdaConfig& cfg) {
  if (cfg.clip_norm > 0.0) {
    for (ParamGroup g :
         {ParamGroup::Encoder, ParamGroup::Task, ParamGroup::Discriminator}) {
      std::vector<Tensor*> view;
      for (size_t i = 0; i < model.params.size(); ++i)
        if (model.params[i].group == g) view.push_back(&grads[i]);
      if (!view.empty()) clip_gradients(view, cfg.clip_norm);
    }
  }
  for (size_t i = 0; i < model.params.size(); ++i) {
    Tensor& p = model.params[i].value.data();
    const Tensor& g = grads[i];
    for (int64_t j = 0; j < p.numel(); ++j)
      p[static_cast<size_t>(j)] -= cfg.learning_rate * g[static_cast<size_t>(j)];
  }
}

bool all_finite(const LossReport& r) {
  return std::isfinite(r.l_s) && std::isfinite(r.l_ad) && std::isfinite(r.l_ae) &&
         std::isfinite(r.combined);
}

}  // namespace

TrialResult train(SplitModel& model, const DomainData& data, const AdaConfig& cfg,
                  uint64_t config_hash) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (!cfg.pretrain_checkpoint.empty())
    load_checkpoint(model, cfg.pretrain_checkpoint, /*encoder_only=*/true);

  TrialResult res;
  res.config_hash = config_hash;
  res.seed = cfg.seed;
  res.segmentation = model.spec.head_kind == HeadKind::Segmenter;

  const int64_t n_src = data.source_train.size();
  const int64_t label_block =
      static_cast<int64_t>(data.source_train.labels.size()) / n_src;
  BatchIterator src_it(n_src, cfg.batch_size, sub_seed(cfg.seed, "batch/source"));
  BatchIterator tgt_it(data.target_train.size(),
                       std::min<int64_t>(cfg.batch_size, data.target_train.size()),
                       sub_seed(cfg.seed, "batch/target"));
  const int64_t steps = src_it.batches_per_epoch();
  const double lambda_d =
      cfg.lambda_scope == LambdaScope::Both ? cfg.lambda : 1.0;

  ObjectiveConfig obj;
  obj.lambda = cfg.lambda;
  obj.encoder_loss = cfg.loss_kind;
  obj.lambda_scope = cfg.lambda_scope;

  std::vector<Tensor> grads;
  for (const auto& p : model.params) grads.push_back(Tensor::zeros(p.value.shape()));
  const auto zero_grads = [&] {
    for (Tensor& g : grads) g.zero();
  };

  bool aborted = false;
  for (int64_t epoch = 0; epoch < cfg.total_epochs && !aborted; ++epoch) {
    const bool adversarial = epoch >= cfg.warmup_epochs;
    double sum_ls = 0.0, sum_lad = 0.0, sum_lae = 0.0;

    for (int64_t step = 0; step < steps && !aborted; ++step) {
      const std::vector<int64_t> src_idx = src_it.next();
      const Tensor xb_s = gather_inputs(data.source_train.inputs, src_idx);
      const std::vector<int64_t> yb_s =
          gather_labels(data.source_train.labels, label_block, src_idx);

      if (!adversarial) {
        zero_grads();
        const double ls = supervised_grads(model, xb_s, yb_s, grads);
        if (!std::isfinite(ls)) {
          aborted = true;
          break;
        }
        clip_and_apply(model, grads, cfg);
        sum_ls += ls;
        continue;
      }

      for (int64_t extra = 1; extra < cfg.disc_steps_per_encoder_step; ++extra) {
        const Tensor xb_t =
            gather_inputs(data.target_train.inputs, tgt_it.next());
        if (lambda_d == 0.0) continue;  // inert but keeps the batch stream fixed
        zero_grads();
        const double lad = disc_only_grads(model, xb_s, xb_t, lambda_d, grads);
        if (!std::isfinite(lad)) {
          aborted = true;
          break;
        }
        clip_and_apply(model, grads, cfg);
      }
      if (aborted) break;

      DomainBatch batch;
      batch.source_inputs = xb_s;
      batch.source_labels = yb_s;
      batch.target_inputs = gather_inputs(data.target_train.inputs, tgt_it.next());
      RoutedGrads rg = routed_gradients(model, batch, obj);
      if (!all_finite(rg.report)) {
        aborted = true;
        break;
      }
      clip_and_apply(model, rg.grads, cfg);
      sum_ls += rg.report.l_s;
      sum_lad += rg.report.l_ad;
      sum_lae += rg.report.l_ae;
    }

    if (aborted) break;

    const double mean_ls = sum_ls / static_cast<double>(steps);
    const double mean_lad = sum_lad / static_cast<double>(steps);
    const double mean_lae = sum_lae / static_cast<double>(steps);
    res.l_s.push_back(mean_ls);
    res.l_ad.push_back(mean_lad);
    res.l_ae.push_back(mean_lae);
    res.combined.push_back(mean_ls + cfg.lambda * (mean_lad + mean_lae));

    const EvalResult es = evaluate(model, data.source_test.inputs,
                                   data.source_test.labels);
    const EvalResult et = evaluate(model, data.target_test.inputs,
                                   data.target_test.labels);
    res.p_s.push_back(es.headline());
    res.p_t.push_back(et.headline());
    if (res.segmentation) {
      res.pixel_acc_s.push_back(es.accuracy);
      res.pixel_acc_t.push_back(et.accuracy);
    }
    res.disc_acc.push_back(discriminator_accuracy(model, data.source_test.inputs,
                                                  data.target_test.inputs));
  }

  // A diverged run keeps the fixed-length traces: pad by repeating the last
  // healthy reading (or zeros when the very first epoch blew up).
  const auto pad = [&](std::vector<double>& v) {
    const double fill = v.empty() ? 0.0 : v.back();
    while (static_cast<int64_t>(v.size()) < cfg.total_epochs) v.push_back(fill);
  };
  if (aborted) {
    res.diverged = true;
    for (auto* v : {&res.p_s, &res.p_t, &res.l_s, &res.l_ad, &res.l_ae,
                    &res.combined, &res.disc_acc})
      pad(*v);
    if (res.segmentation) {
      pad(res.pixel_acc_s);
      pad(res.pixel_acc_t);
    }
  }

  res.final_p_s = res.p_s.back();
  res.final_p_t = res.p_t.back();
  const double chance =
      res.segmentation ? 0.5
                       : 1.0 / static_cast<double>(model.spec.num_classes);
  if (res.final_p_t < 0.5 * chance) res.diverged = true;

  res.wall_time_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  return res;
}

TrialResult run_trial(const RunConfig& cfg, SplitModel* model_out) {
  cfg.validate();
  const DomainData data = make_pair(cfg.resolved_data());
  SplitModel model = build_split_model(cfg.network(), cfg.train.seed);
  TrialResult res = train(model, data, cfg.train, cfg.hash());
  if (model_out) *model_out = std::move(model);
  return res;
}

std::string TrialResult::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = hex16(config_hash);
  j["seed"] = seed;
  j["diverged"] = diverged;
  j["task"] = segmentation ? "segmentation" : "classification";
  nlohmann::ordered_json e;
  e["p_s"] = p_s;
  e["p_t"] = p_t;
  e["l_s"] = l_s;
  e["l_ad"] = l_ad;
  e["l_ae"] = l_ae;
  e["combined"] = combined;
  e["disc_acc"] = disc_acc;
  if (segmentation) {
    e["pixel_acc_s"] = pixel_acc_s;
    e["pixel_acc_t"] = pixel_acc_t;
  }
  j["epochs"] = std::move(e);
  j["final"] = {{"p_s", final_p_s}, {"p_t", final_p_t}};
  return j.dump(2) + "\n";
}

TrialResult parse_trial_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  TrialResult r;
  r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  r.seed = j.at("seed").get<uint64_t>();
  r.diverged = j.at("diverged").get<bool>();
  r.segmentation = j.at("task").get<std::string>() == "segmentation";
  const auto& e = j.at("epochs");
  r.p_s = e.at("p_s").get<std::vector<double>>();
  r.p_t = e.at("p_t").get<std::vector<double>>();
  r.l_s = e.at("l_s").get<std::vector<double>>();
  r.l_ad = e.at("l_ad").get<std::vector<double>>();
  r.l_ae = e.at("l_ae").get<std::vector<double>>();
  r.combined = e.at("combined").get<std::vector<double>>();
  r.disc_acc = e.at("disc_acc").get<std::vector<double>>();
  if (r.segmentation) {
    r.pixel_acc_s = e.at("pixel_acc_s").get<std::vector<double>>();
    r.pixel_acc_t = e.at("pixel_acc_t").get<std::vector<double>>();
  }
  r.final_p_s = j.at("final").at("p_s").get<double>();
  r.final_p_t = j.at("final").at("p_t").get<double>();
  return r;
}

}  // namespace adaforge
