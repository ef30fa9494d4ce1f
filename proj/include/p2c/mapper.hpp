#pragma once

// Text-to-visual prompt mapper and its denoising reconstruction loss.

#include "p2c/json_io.hpp"
#include "p2c/rng.hpp"
#include "p2c/tape.hpp"

namespace p2c {

struct VlMapper {
  Tensor W1;  // [s_H*d_in x d_in]
  Tensor b1;  // [s_H*d_in]
  Tensor W2;  // [d_out x s_H*d_in]
  Tensor b2;  // [d_out]
  std::size_t s_H = 2;

  std::size_t d_in() const { return W1.dim(1); }
  std::size_t hidden() const { return W1.dim(0); }
  std::size_t d_out() const { return W2.dim(0); }
};

// He-style init for W1, 1/sqrt(fan_in) for W2, zero biases.
VlMapper make_mapper(std::size_t d_in, std::size_t d_out, std::size_t s_H, Rng& rng);

struct AuxLossSpec {
  double sigma_aux = 0.01;
  double lambda = 0.1;
  bool detach_clean = true;
  // Let the reconstruction branch push gradients into the prompts too.
  bool updates_prompts = true;
};

struct MapperVars {
  Var W1, b1, W2, b2;
};

MapperVars register_mapper(Tape& tape, const ParamMap& params);
MapperVars bind_constant(Tape& tape, const VlMapper& m);

// W2 relu(W1 p + b1) + b2 for a flat prompt vector p.
Var map_forward(const MapperVars& F, Var prompts_flat);

struct AuxTerms {
  Var loss;
  Var clean;
  Var recon;
};

// MSE between F(P_t + eta) and F(P_t), with eta supplied by the caller so the
// same draw can be replayed (gradient checks, oracles).
AuxTerms aux_denoising_loss(const MapperVars& F, Var prompts_flat, const Tensor& eta, const AuxLossSpec& spec);

// Draws eta ~ N(0, sigma_aux^2 I) of length d and evaluates the loss.
AuxTerms aux_denoising_loss(const MapperVars& F, Var prompts_flat, const AuxLossSpec& spec, Rng& rng);

Tensor draw_eta(std::size_t d, double sigma_aux, Rng& rng);

}  // namespace p2c
