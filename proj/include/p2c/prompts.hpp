#pragma once

// Learnable attribute-anchored text prompts and the frozen toy dual encoder.
//
// Text token layout for class c:
//   [P_att[0], anchor[0], P_att[1], anchor[1], ..., P_cls, class_token[c]]
// Both encoders are frozen one-hidden-layer maps over the flattened tokens;
// only P_cls and P_att (and the mapper) are trained.

#include <span>
#include <string>
#include <vector>

#include "p2c/json_io.hpp"
#include "p2c/rng.hpp"
#include "p2c/tape.hpp"

namespace p2c {

struct PromptConfig {
  std::size_t d_tok = 8;
  std::size_t TL_cls = 2;
  std::size_t TL_att = 2;
  std::size_t n_att = 2;
  std::size_t d_e = 16;
  std::size_t d_h = 32;
  double logit_scale = 1.0 / 0.07;
  double init_std = 0.02;
  // Frozen backbone construction. The class-token block of the text encoder
  // and the feature block of the image encoder are aligned through the task's
  // render matrix up to `align_noise`; the hidden biases of the two towers
  // differ by `domain_gap`, a shift prompts can learn to compensate.
  double ctx_gain = 1.0;
  double align_noise = 0.5;
  double domain_gap = 0.5;

  void validate() const;

  std::size_t text_length() const noexcept { return n_att * (TL_att + 1) + TL_cls + 1; }
  // Learnable text tokens; the visual prompt has the same token count.
  std::size_t learnable_tokens() const noexcept { return TL_cls + n_att * TL_att; }
  std::size_t visual_length() const noexcept { return learnable_tokens(); }
};

struct PromptSet {
  Tensor P_cls;         // [TL_cls x d_tok]
  Tensor P_att;         // [n_att x TL_att x d_tok]; empty when n_att == 0
  Tensor anchors;       // [n_att x d_tok], frozen; empty when n_att == 0
  Tensor class_tokens;  // [C x d_tok], frozen

  bool has_attributes() const noexcept { return P_att.size() > 0; }
  std::size_t num_classes() const { return class_tokens.dim(0); }
  // flatten(P_cls) followed by flatten(P_att).
  Tensor flat_learnable() const;
};

PromptSet make_prompt_set(const PromptConfig& cfg, const Tensor& class_tokens, Rng& rng);

struct FrozenEncoders {
  Tensor W_t, b_t, U_t;  // [d_h x L_text*d_tok], [d_h], [d_e x d_h]
  Tensor W_v, b_v, U_v;  // [d_h x (d_x + L_vis*d_tok)], [d_h], [d_e x d_h]
  std::size_t d_x = 0;
};

// `render` is the task's [d_x x d_tok] map from token space to feature space.
FrozenEncoders make_encoders(const PromptConfig& cfg, const Tensor& render, Rng& rng);

// SHA-256 over every frozen tensor (encoders, anchors, class tokens).
std::string frozen_checksum(const FrozenEncoders& enc, const PromptSet& ps);

// Encoder weights registered on one tape as constants.
struct EncoderVars {
  Var W_t, b_t, U_t, W_v, b_v, U_v, zero_e;
};
EncoderVars bind(Tape& tape, const FrozenEncoders& enc);

// Prompt tensors as seen by one forward pass (possibly noised).
struct PromptVars {
  Var P_cls;
  Var P_att;  // invalid when there are no attributes
  const PromptConfig* cfg = nullptr;
  const PromptSet* frozen = nullptr;
};

Var flatten_learnable(const PromptVars& pv);

Var assemble_text_sequence(const PromptVars& pv, std::size_t class_index);
Var encode_text(const EncoderVars& enc, Var seq);
Var encode_image(const EncoderVars& enc, Var x, Var P_v);

// [class_set.size() x d_e] stack of text embeddings.
Var text_embeddings(const EncoderVars& enc, const PromptVars& pv, std::span<const std::size_t> class_set);
// logit_scale * <image, text_c> for each row of the text stack.
Var class_logits(Var image_embedding, Var text_stack, double logit_scale);

Var logits(const EncoderVars& enc, const PromptVars& pv, Var x, Var P_v, std::span<const std::size_t> class_set);

json to_json(const PromptConfig& cfg);

}  // namespace p2c
