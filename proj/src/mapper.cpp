#include "p2c/mapper.hpp"

#include <cmath>

namespace p2c {

VlMapper make_mapper(std::size_t d_in, std::size_t d_out, std::size_t s_H, Rng& rng) {
  if (d_in < 1 || d_out < 1 || s_H < 1) throw ValidationError("mapper: d_in, d_out and s_H must be >= 1");
  const std::size_t hidden = s_H * d_in;
  VlMapper m;
  m.s_H = s_H;
  m.W1 = rng.normal_tensor({hidden, d_in}, std::sqrt(2.0 / static_cast<double>(d_in)));
  m.b1 = Tensor({hidden});
  m.W2 = rng.normal_tensor({d_out, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)));
  m.b2 = Tensor({d_out});
  return m;
}

MapperVars register_mapper(Tape& tape, const ParamMap& params) {
  return MapperVars{tape.parameter("mapper.W1", params.at("mapper.W1")),
                    tape.parameter("mapper.b1", params.at("mapper.b1")),
                    tape.parameter("mapper.W2", params.at("mapper.W2")),
                    tape.parameter("mapper.b2", params.at("mapper.b2"))};
}

MapperVars bind_constant(Tape& tape, const VlMapper& m) {
  return MapperVars{tape.constant(m.W1, "mapper.W1"), tape.constant(m.b1, "mapper.b1"),
                    tape.constant(m.W2, "mapper.W2"), tape.constant(m.b2, "mapper.b2")};
}

Var map_forward(const MapperVars& F, Var prompts_flat) {
  return affine(relu_elem(affine(prompts_flat, F.W1, F.b1)), F.W2, F.b2);
}

Tensor draw_eta(std::size_t d, double sigma_aux, Rng& rng) {
  if (!(sigma_aux >= 0.0)) throw ValidationError("mapper.sigma_aux must be >= 0");
  return rng.normal_tensor({d}, sigma_aux);
}

AuxTerms aux_denoising_loss(const MapperVars& F, Var prompts_flat, const Tensor& eta, const AuxLossSpec& spec) {
  Tape& tape = prompts_flat.tape();
  Var clean = map_forward(F, prompts_flat);
  if (spec.detach_clean) clean = detach(clean);
  Var source = spec.updates_prompts ? prompts_flat : detach(prompts_flat);
  Var recon = map_forward(F, add(source, tape.constant(eta, "eta")));
  return AuxTerms{mse(recon, clean), clean, recon};
}

AuxTerms aux_denoising_loss(const MapperVars& F, Var prompts_flat, const AuxLossSpec& spec, Rng& rng) {
  return aux_denoising_loss(F, prompts_flat, draw_eta(prompts_flat.value().size(), spec.sigma_aux, rng), spec);
}

}  // namespace p2c
