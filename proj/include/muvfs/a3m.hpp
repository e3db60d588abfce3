#pragma once

// Action-appearance aligned attention: the action embedding queries the
// per-frame appearance embeddings; the attended value is l2-normalized and
// fed to a linear classifier.

#include <cstddef>
#include <vector>

#include "muvfs/tensor.hpp"

namespace muvfs::a3m {

struct A3MConfig {
  std::size_t embed_dim = 64;
  std::size_t d_k = 16;
  std::size_t d_v = 64;
  std::size_t way = 5;
  bool bias = true;
};

// Maps are D x d (x * K convention); the classifier is d_v x way.
struct A3MParameters {
  Tensor K, V, Q;
  Tensor W, b;

  // Normal(0, 1/sqrt(D)) heads, zero classifier.
  static A3MParameters init(const A3MConfig& config, Rng& rng);

  std::size_t d_k() const { return K.size(1); }
  std::size_t d_v() const { return V.size(1); }
  std::size_t way() const { return W.size(1); }
  bool has_heads() const { return K.defined(); }

  // Head matrices (when present) then classifier, in a fixed order.
  std::vector<Tensor> list() const;
  static A3MParameters from_list(const std::vector<Tensor>& list, bool heads, bool bias);
  A3MParameters clone(bool requires_grad = true) const;
};

struct AttentionRecord {
  Tensor a;  // B x F
  Tensor h;  // B x d_v
};

// ap_frames: B x F x D (or F x D for one item), act: B x D (or D).
AttentionRecord attend(const Tensor& ap_frames, const Tensor& act, const A3MParameters& params);

// logits = l2_normalize(h) W + b, h: B x d (or d).
Tensor classify(const Tensor& h, const A3MParameters& params);

}  // namespace muvfs::a3m
