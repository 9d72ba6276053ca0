#include "adaforge/model.hpp"

#include <cmath>
#include <stdexcept>

#include "adaforge/hashing.hpp"
#include "adaforge/rng.hpp"

namespace adaforge {

namespace {

// Removes up to two trailing dense atoms (the capacity axis touches dense
// layers only), keeping at least one parameterized hidden layer in the
// discriminator.
std::vector<LayerSpec> shrink_disc_trunk(std::vector<LayerSpec> atoms) {
  for (int removed = 0; removed < 2; ++removed) {
    int param_count = 0;
    int last_dense = -1;
    for (size_t i = 0; i < atoms.size(); ++i) {
      if (atoms[i].has_params()) ++param_count;
      if (atoms[i].kind == LayerKind::Dense) last_dense = static_cast<int>(i);
    }
    if (last_dense < 0 || param_count <= 1) break;
    auto it = atoms.begin() + last_dense;
    // Drop the activation paired with the removed layer, if it sits inside
    // this sequence (the head supplies its own).
    if (static_cast<size_t>(last_dense + 1) < atoms.size() &&
        atoms[static_cast<size_t>(last_dense + 1)].kind == LayerKind::Relu)
      atoms.erase(it + 1);
    atoms.erase(atoms.begin() + last_dense);
  }
  return atoms;
}

struct ParamBuilder {
  uint64_t seed;
  std::vector<Parameter>& out;

  // Appends w (and b) parameters for every parameterized atom of `atoms`,
  // returning the bound instances. feeds_relu[i] says whether atom i's output
  // goes straight into a relu (He-uniform init) or not (Xavier-uniform).
  std::vector<LayerInstance> bind(const std::vector<LayerSpec>& atoms,
                                  const std::vector<bool>& feeds_relu,
                                  ParamGroup grp, const Shape& input) {
    std::vector<LayerInstance> bound;
    Shape cur = input;
    const std::string prefix = group_name(grp);
    for (size_t i = 0; i < atoms.size(); ++i) {
      const LayerSpec& a = atoms[i];
      LayerInstance inst{a, -1, -1};
      if (a.has_params()) {
        int64_t fan_in, fan_out;
        Shape wshape, bshape;
        if (a.kind == LayerKind::Dense) {
          fan_in = cur.dim(0);
          fan_out = a.width;
          wshape = Shape{fan_in, a.width};
          bshape = Shape{a.width};
        } else {  // conv
          fan_in = cur.dim(0) * a.kernel * a.kernel;
          fan_out = a.width * a.kernel * a.kernel;
          wshape = Shape{a.width, cur.dim(0), a.kernel, a.kernel};
          bshape = Shape{a.width};
        }
        const double limit = feeds_relu[i] ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                           : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        char idx[8];
        std::snprintf(idx, sizeof idx, "%02zu", i);
        const std::string base =
            prefix + "." + idx + "." + layer_kind_name(a.kind);

        Tensor w(wshape);
        Rng rng(sub_seed(seed, base + ".w"));
        for (int64_t j = 0; j < w.numel(); ++j)
          w[static_cast<size_t>(j)] = rng.uniform(-limit, limit);
        inst.w = static_cast<int>(out.size());
        out.push_back({Value::leaf(std::move(w), true), base + ".w", grp});
        inst.b = static_cast<int>(out.size());
        out.push_back({Value::leaf(Tensor::zeros(bshape), true), base + ".b", grp});
      }
      bound.push_back(inst);
      cur = infer_shape(a, cur);
    }
    return bound;
  }
};

std::vector<bool> feeds_relu_map(const std::vector<LayerSpec>& seq) {
  std::vector<bool> m(seq.size(), false);
  for (size_t i = 0; i + 1 < seq.size(); ++i)
    m[i] = seq[i + 1].kind == LayerKind::Relu;
  return m;
}

Value apply_atoms(const std::vector<LayerInstance>& atoms,
                  const std::vector<Parameter>& params, Value x) {
  for (const auto& inst : atoms) {
    switch (inst.spec.kind) {
      case LayerKind::Dense:
        x = add(matmul(x, params[static_cast<size_t>(inst.w)].value),
                params[static_cast<size_t>(inst.b)].value);
        break;
      case LayerKind::Conv:
        x = conv2d(x, params[static_cast<size_t>(inst.w)].value,
                   params[static_cast<size_t>(inst.b)].value);
        break;
      case LayerKind::Pool:
        x = maxpool2x2(x);
        break;
      case LayerKind::Relu:
        x = relu(x);
        break;
      case LayerKind::Flatten: {
        const int64_t B = x.shape().dim(0);
        x = reshape(x, Shape{B, x.numel() / B});
        break;
      }
      case LayerKind::Upsample:
        x = upsample2x(x);
        break;
    }
  }
  return x;
}

}  // namespace

SplitModel build_split_model(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  SplitModel m;
  m.spec = spec;
  m.seed = seed;

  const auto& trunk = spec.layers;
  const size_t split = static_cast<size_t>(spec.split_index);
  const std::vector<LayerSpec> enc_atoms(trunk.begin(), trunk.begin() + split);
  const std::vector<LayerSpec> s_trunk(trunk.begin() + split, trunk.end());

  std::vector<LayerSpec> task_seq = s_trunk;
  for (const auto& a : task_head_atoms(spec)) task_seq.push_back(a);

  std::vector<LayerSpec> disc_seq = spec.disc_capacity_delta < 0
                                        ? shrink_disc_trunk(s_trunk)
                                        : s_trunk;
  for (const auto& a : disc_head_atoms(spec)) disc_seq.push_back(a);

  m.feature_shape = infer_sequence(enc_atoms, spec.input_shape);
  (void)infer_sequence(task_seq, m.feature_shape);
  const Shape disc_out = infer_sequence(disc_seq, m.feature_shape);
  if (!spec.patch_discriminator && disc_out != Shape{1})
    throw std::invalid_argument("discriminator must end in a single logit, got " +
                                disc_out.str());

  // The encoder/task boundary is an arbitrary cut of one chain, so the
  // "feeds relu" decision looks across it.
  std::vector<LayerSpec> full_chain = trunk;
  for (const auto& a : task_head_atoms(spec)) full_chain.push_back(a);
  const std::vector<bool> chain_relu = feeds_relu_map(full_chain);
  const std::vector<bool> enc_relu(chain_relu.begin(), chain_relu.begin() + split);
  const std::vector<bool> task_relu(chain_relu.begin() + split, chain_relu.end());

  ParamBuilder pb{seed, m.params};
  m.encoder_atoms = pb.bind(enc_atoms, enc_relu, ParamGroup::Encoder, spec.input_shape);
  m.task_atoms = pb.bind(task_seq, task_relu, ParamGroup::Task, m.feature_shape);
  m.disc_atoms =
      pb.bind(disc_seq, feeds_relu_map(disc_seq), ParamGroup::Discriminator, m.feature_shape);
  return m;
}

Value SplitModel::forward_encoder(const Value& x) const {
  const Shape& s = x.shape();
  Shape expect;
  {
    std::vector<int64_t> d = {s.rank() > 0 ? s.dim(0) : 0};
    for (int i = 0; i < spec.input_shape.rank(); ++i) d.push_back(spec.input_shape.dim(i));
    expect = Shape{d};
  }
  if (s != expect)
    throw std::invalid_argument("encoder input shape " + s.str() +
                                " does not match (batch, " + spec.input_shape.str() +
                                ")");
  return apply_atoms(encoder_atoms, params, x);
}

Value SplitModel::forward_task(const Value& features) const {
  return apply_atoms(task_atoms, params, features);
}

Value SplitModel::forward_disc(const Value& features) const {
  return sigmoid(apply_atoms(disc_atoms, params, features));
}

Value SplitModel::predict(const Value& x) const {
  return forward_task(forward_encoder(x));
}

std::vector<Parameter> SplitModel::group(ParamGroup g) const {
  std::vector<Parameter> out;
  for (const auto& p : params)
    if (p.group == g) out.push_back(p);
  return out;
}

int64_t SplitModel::param_count(ParamGroup g) const {
  int64_t n = 0;
  for (const auto& p : params)
    if (p.group == g) n += p.value.numel();
  return n;
}

int64_t SplitModel::param_count() const {
  int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

}  // namespace adaforge
