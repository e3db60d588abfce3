#include "muvfs/a3m.hpp"

#include <cmath>

namespace muvfs::a3m {

A3MParameters A3MParameters::init(const A3MConfig& c, Rng& rng) {
  if (c.embed_dim == 0 || c.d_k == 0 || c.d_v == 0 || c.way == 0) throw std::invalid_argument("a3m: widths must be positive");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(c.embed_dim));
  A3MParameters p;
  p.K = Tensor::randn({c.embed_dim, c.d_k}, stddev, rng, true);
  p.V = Tensor::randn({c.embed_dim, c.d_v}, stddev, rng, true);
  p.Q = Tensor::randn({c.embed_dim, c.d_k}, stddev, rng, true);
  p.W = Tensor::zeros({c.d_v, c.way}, true);
  if (c.bias) p.b = Tensor::zeros({c.way}, true);
  return p;
}

std::vector<Tensor> A3MParameters::list() const {
  std::vector<Tensor> out;
  if (has_heads()) out = {K, V, Q};
  out.push_back(W);
  if (b.defined()) out.push_back(b);
  return out;
}

A3MParameters A3MParameters::from_list(const std::vector<Tensor>& list, bool heads, bool bias) {
  const std::size_t expected = (heads ? 3u : 0u) + 1u + (bias ? 1u : 0u);
  if (list.size() != expected) throw std::invalid_argument("a3m: parameter list has the wrong length");
  A3MParameters p;
  std::size_t i = 0;
  if (heads) p.K = list[i++], p.V = list[i++], p.Q = list[i++];
  p.W = list[i++];
  if (bias) p.b = list[i++];
  return p;
}

A3MParameters A3MParameters::clone(bool requires_grad) const {
  auto copy = [&](const Tensor& t) { return t.defined() ? Tensor(t.shape(), t.to_vector(), requires_grad) : Tensor(); };
  A3MParameters p;
  p.K = copy(K), p.V = copy(V), p.Q = copy(Q), p.W = copy(W), p.b = copy(b);
  return p;
}

AttentionRecord attend(const Tensor& ap_frames, const Tensor& act, const A3MParameters& p) {
  if (!p.has_heads()) throw std::logic_error("attend: parameters carry no attention heads");
  Tensor frames = ap_frames, query = act;
  const bool single = ap_frames.dim() == 2;
  if (single) frames = reshape(ap_frames, {1, ap_frames.size(0), ap_frames.size(1)});
  if (act.dim() == 1) query = reshape(act, {1, act.size(0)});
  if (frames.dim() != 3 || query.dim() != 2 || frames.size(0) != query.size(0) || frames.size(1) == 0) {
    throw ShapeError("attend: frames " + shape_str(ap_frames.shape()) + " and action " + shape_str(act.shape()) +
                     " are not a batch of F >= 1 frame embeddings plus one action embedding each");
  }
  const std::size_t B = frames.size(0), F = frames.size(1), D = frames.size(2);
  if (D != p.K.size(0) || query.size(1) != p.Q.size(0)) {
    throw ShapeError("attend: embedding width " + std::to_string(D) + " / " + std::to_string(query.size(1)) +
                     " does not match head input width " + std::to_string(p.K.size(0)));
  }
  const Tensor flat = reshape(frames, {B * F, D});
  const Tensor k = reshape(matmul(flat, p.K), {B, F, p.d_k()});
  const Tensor v = reshape(matmul(flat, p.V), {B, F, p.d_v()});
  const Tensor q = reshape(matmul(query, p.Q), {B, 1, p.d_k()});
  const Tensor scores = scale(sum(mul(k, q), 2), 1.0 / std::sqrt(static_cast<double>(p.d_k())));
  AttentionRecord r;
  r.a = softmax(scores);
  r.h = sum(mul(reshape(r.a, {B, F, 1}), v), 1);
  if (single) {
    r.a = reshape(r.a, {F});
    r.h = reshape(r.h, {p.d_v()});
  }
  return r;
}

Tensor classify(const Tensor& h, const A3MParameters& p) {
  const bool single = h.dim() == 1;
  const Tensor x = single ? reshape(h, {1, h.size(0)}) : h;
  if (x.dim() != 2 || x.size(1) != p.W.size(0)) {
    throw ShapeError("classify: feature " + shape_str(h.shape()) + " does not match classifier input width " +
                     std::to_string(p.W.size(0)));
  }
  Tensor logits = matmul(l2_normalize(x), p.W);
  if (p.b.defined()) logits = add(logits, p.b);
  return single ? reshape(logits, {p.way()}) : logits;
}

}  // namespace muvfs::a3m
