#include "adaforge/routing.hpp"

namespace adaforge {

namespace {

void harvest(const SplitModel& model, ParamGroup g, std::vector<Tensor>& into) {
  for (size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    if (p.group != g) continue;
    const Tensor& src = p.value.grad();
    Tensor& dst = into[i];
    for (int64_t j = 0; j < src.numel(); ++j)
      dst[static_cast<size_t>(j)] += src[static_cast<size_t>(j)];
  }
}

}  // namespace

RoutedGrads routed_gradients(const SplitModel& model, const DomainBatch& batch,
                             const ObjectiveConfig& cfg) {
  const bool patch = model.spec.patch_discriminator;
  const double lambda_e = cfg.lambda;
  const double lambda_d = cfg.lambda_scope == LambdaScope::Both ? cfg.lambda : 1.0;

  RoutedGrads out;
  out.grads.reserve(model.params.size());
  for (const auto& p : model.params) out.grads.push_back(Tensor::zeros(p.value.shape()));

  zero_grad(model.params);

  // Supervised stage: task head and encoder.
  Value f_s = model.forward_encoder(Value::leaf(batch.source_inputs, false));
  Value l_s = supervised_loss(model.forward_task(f_s), batch.source_labels);
  out.report.l_s = l_s.item();
  if (!cfg.test_zero_supervised) {
    backward(l_s);
    harvest(model, ParamGroup::Task, out.grads);
    harvest(model, ParamGroup::Encoder, out.grads);
    zero_grad(model.params);
  }

  // Encoder adversarial stage: backward flows through the discriminator into
  // the encoder; only the encoder contribution is kept.
  Value f_t = model.forward_encoder(Value::leaf(batch.target_inputs, false));
  Value d_s = model.forward_disc(f_s);
  Value d_t = model.forward_disc(f_t);
  Value l_ae = patch
                   ? patch_encoder_adversarial_loss(cfg.encoder_loss, d_s, d_t)
                   : encoder_adversarial_loss(cfg.encoder_loss, d_s, d_t);
  out.report.l_ae = l_ae.item();
  if (lambda_e != 0.0) {
    backward(mul(l_ae, Value::scalar(lambda_e)));
    harvest(model, ParamGroup::Encoder, out.grads);
    zero_grad(model.params);
  }

  // Discriminator stage on detached features: the encoder is a constant here.
  Value d_s_det = model.forward_disc(Value::leaf(f_s.data(), false));
  Value d_t_det = model.forward_disc(Value::leaf(f_t.data(), false));
  Value l_ad = patch ? patch_discriminator_loss(d_s_det, d_t_det)
                     : discriminator_loss(d_s_det, d_t_det);
  out.report.l_ad = l_ad.item();
  if (lambda_d != 0.0) {
    backward(mul(l_ad, Value::scalar(lambda_d)));
    harvest(model, ParamGroup::Discriminator, out.grads);
    zero_grad(model.params);
  }

  out.report.lambda = cfg.lambda;
  out.report.combined =
      out.report.l_s + cfg.lambda * (out.report.l_ad + out.report.l_ae);
  return out;
}

}  // namespace adaforge
