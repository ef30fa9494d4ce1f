#include "p2c/prompts.hpp"

#include <cmath>
#include <cstring>

namespace p2c {

void PromptConfig::validate() const {
  if (d_tok < 1 || TL_cls < 1 || d_e < 1 || d_h < 1) {
    throw ValidationError("prompts: d_tok, TL_cls, d_e and d_h must be >= 1");
  }
  if (n_att > 0 && TL_att < 1) throw ValidationError("prompts.TL_att must be >= 1 when n_att > 0");
  if (!(logit_scale > 0.0)) throw ValidationError("prompts.logit_scale must be > 0");
  if (!(init_std >= 0.0) || !(ctx_gain >= 0.0) || !(align_noise >= 0.0) || !(domain_gap >= 0.0)) {
    throw ValidationError("prompts: init_std, ctx_gain, align_noise, domain_gap must be >= 0");
  }
}

json to_json(const PromptConfig& c) {
  return json{{"d_tok", c.d_tok},           {"TL_cls", c.TL_cls},         {"TL_att", c.TL_att},
              {"n_att", c.n_att},           {"d_e", c.d_e},               {"d_h", c.d_h},
              {"logit_scale", c.logit_scale}, {"init_std", c.init_std},   {"ctx_gain", c.ctx_gain},
              {"align_noise", c.align_noise}, {"domain_gap", c.domain_gap}};
}

Tensor PromptSet::flat_learnable() const {
  std::vector<double> flat = P_cls.values();
  flat.insert(flat.end(), P_att.values().begin(), P_att.values().end());
  return Tensor({flat.size()}, std::move(flat));
}

PromptSet make_prompt_set(const PromptConfig& cfg, const Tensor& class_tokens, Rng& rng) {
  cfg.validate();
  if (class_tokens.rank() != 2 || class_tokens.dim(1) != cfg.d_tok) {
    throw ValidationError("class tokens " + shape_str(class_tokens.shape()) + " do not match prompts.d_tok=" +
                          std::to_string(cfg.d_tok));
  }
  PromptSet ps;
  ps.P_cls = rng.normal_tensor({cfg.TL_cls, cfg.d_tok}, cfg.init_std);
  if (cfg.n_att > 0) {
    ps.P_att = rng.normal_tensor({cfg.n_att, cfg.TL_att, cfg.d_tok}, cfg.init_std);
    ps.anchors = rng.normal_tensor({cfg.n_att, cfg.d_tok});
  }
  ps.class_tokens = class_tokens;
  return ps;
}

FrozenEncoders make_encoders(const PromptConfig& cfg, const Tensor& render, Rng& rng) {
  cfg.validate();
  if (render.rank() != 2 || render.dim(1) != cfg.d_tok) {
    throw ValidationError("render matrix " + shape_str(render.shape()) + " does not match prompts.d_tok");
  }
  const std::size_t d_tok = cfg.d_tok, d_h = cfg.d_h, d_x = render.dim(0);
  const std::size_t L_text = cfg.text_length(), L_vis = cfg.visual_length();
  const double tok_scale = 1.0 / std::sqrt(static_cast<double>(d_tok));
  const double hid_scale = 1.0 / std::sqrt(static_cast<double>(d_h));

  FrozenEncoders enc;
  enc.d_x = d_x;

  // Class-token block A and its misaligned image-side counterpart (A + E).
  Tensor A = rng.normal_tensor({d_h, d_tok}, tok_scale);
  Tensor E = rng.normal_tensor({d_h, d_tok}, cfg.align_noise * tok_scale);

  enc.W_t = Tensor({d_h, L_text * d_tok});
  const std::size_t text_cols = L_text * d_tok;
  for (std::size_t p = 0; p + 1 < L_text; ++p) {
    for (std::size_t i = 0; i < d_h; ++i) {
      for (std::size_t j = 0; j < d_tok; ++j) enc.W_t[i * text_cols + p * d_tok + j] = cfg.ctx_gain * tok_scale * rng.normal();
    }
  }
  for (std::size_t i = 0; i < d_h; ++i) {
    for (std::size_t j = 0; j < d_tok; ++j) enc.W_t[i * text_cols + (L_text - 1) * d_tok + j] = A.at(i, j);
  }

  const std::size_t vis_cols = d_x + L_vis * d_tok;
  enc.W_v = Tensor({d_h, vis_cols});
  for (std::size_t i = 0; i < d_h; ++i) {
    // (A + E) * render^T maps rendered features back onto the token block.
    for (std::size_t r = 0; r < d_x; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d_tok; ++j) acc += (A.at(i, j) + E.at(i, j)) * render.at(r, j);
      enc.W_v[i * vis_cols + r] = acc;
    }
    for (std::size_t k = d_x; k < vis_cols; ++k) enc.W_v[i * vis_cols + k] = cfg.ctx_gain * tok_scale * rng.normal();
  }

  enc.b_t = rng.normal_tensor({d_h}, 0.1);
  enc.b_v = enc.b_t;
  for (double& v : enc.b_v.data()) v += cfg.domain_gap * rng.normal();

  enc.U_t = rng.normal_tensor({cfg.d_e, d_h}, hid_scale);
  enc.U_v = enc.U_t;
  for (double& v : enc.U_v.data()) v += cfg.align_noise * hid_scale * rng.normal();
  return enc;
}

std::string frozen_checksum(const FrozenEncoders& enc, const PromptSet& ps) {
  std::string bytes;
  for (const Tensor* t : {&enc.W_t, &enc.b_t, &enc.U_t, &enc.W_v, &enc.b_v, &enc.U_v, &ps.anchors, &ps.class_tokens}) {
    const auto& v = t->values();
    const std::size_t old = bytes.size();
    bytes.resize(old + v.size() * sizeof(double));
    if (!v.empty()) std::memcpy(bytes.data() + old, v.data(), v.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

EncoderVars bind(Tape& tape, const FrozenEncoders& enc) {
  return EncoderVars{tape.constant(enc.W_t, "W_t"), tape.constant(enc.b_t, "b_t"), tape.constant(enc.U_t, "U_t"),
                     tape.constant(enc.W_v, "W_v"), tape.constant(enc.b_v, "b_v"), tape.constant(enc.U_v, "U_v"),
                     tape.constant(Tensor({enc.U_t.dim(0)}), "zero")};
}

Var flatten_learnable(const PromptVars& pv) {
  if (pv.P_att.valid()) return concat({pv.P_cls, pv.P_att});
  return reshape(pv.P_cls, {pv.P_cls.value().size()});
}

static Tensor row_of(const Tensor& m, std::size_t r) {
  const std::size_t n = m.dim(1);
  const auto begin = m.values().begin() + static_cast<std::ptrdiff_t>(r * n);
  return Tensor({n}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n)));
}

Var assemble_text_sequence(const PromptVars& pv, std::size_t class_index) {
  const PromptConfig& cfg = *pv.cfg;
  const PromptSet& ps = *pv.frozen;
  if (class_index >= ps.num_classes()) {
    throw IndexError("assemble_text_sequence: class " + std::to_string(class_index) + " out of range for " +
                     std::to_string(ps.num_classes()) + " classes");
  }
  Tape& tape = pv.P_cls.tape();
  std::vector<Var> parts;
  const std::size_t att_len = cfg.TL_att * cfg.d_tok;
  for (std::size_t a = 0; a < cfg.n_att; ++a) {
    parts.push_back(slice(pv.P_att, a * att_len, att_len));
    parts.push_back(tape.constant(row_of(ps.anchors, a), "anchor"));
  }
  parts.push_back(pv.P_cls);
  parts.push_back(tape.constant(row_of(ps.class_tokens, class_index), "class_token"));
  return reshape(concat(parts), {cfg.text_length(), cfg.d_tok});
}

Var encode_text(const EncoderVars& enc, Var seq) {
  Var flat = reshape(seq, {seq.value().size()});
  Var hidden = tanh_elem(affine(flat, enc.W_t, enc.b_t));
  return l2_normalize(affine(hidden, enc.U_t, enc.zero_e));
}

Var encode_image(const EncoderVars& enc, Var x, Var P_v) {
  Var input = concat({x, P_v});
  Var hidden = tanh_elem(affine(input, enc.W_v, enc.b_v));
  return l2_normalize(affine(hidden, enc.U_v, enc.zero_e));
}

Var text_embeddings(const EncoderVars& enc, const PromptVars& pv, std::span<const std::size_t> class_set) {
  if (class_set.empty()) throw DimensionError("text_embeddings: empty class set");
  std::vector<Var> rows;
  rows.reserve(class_set.size());
  for (std::size_t c : class_set) rows.push_back(encode_text(enc, assemble_text_sequence(pv, c)));
  return stack_rows(rows);
}

Var class_logits(Var image_embedding, Var text_stack, double logit_scale) {
  Var zero = image_embedding.tape().constant(Tensor({text_stack.value().dim(0)}), "zero");
  return scale(affine(image_embedding, text_stack, zero), logit_scale);
}

Var logits(const EncoderVars& enc, const PromptVars& pv, Var x, Var P_v, std::span<const std::size_t> class_set) {
  return class_logits(encode_image(enc, x, P_v), text_embeddings(enc, pv, class_set), pv.cfg->logit_scale);
}

}  // namespace p2c
