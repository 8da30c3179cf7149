#pragma once

#include <cstdint>
#include <vector>

#include "capforge/data/vocabulary.hpp"
#include "capforge/model/config.hpp"
#include "capforge/model/decoder.hpp"
#include "capforge/model/encoder.hpp"
#include "capforge/model/reconstructor.hpp"

namespace capforge {

/// All learnable state. Encoder + decoder form the theta_ed partition, the
/// reconstructor is theta_dr.
struct CaptionModel {
  ModelDims dims;
  Vocabulary vocab;
  EncoderParams encoder;
  DecoderParams decoder;
  ReconstructorParams reconstructor;

  static CaptionModel create(ModelDims dims, Vocabulary vocab, std::uint64_t seed) {
    dims.vocab_size = vocab.size();
    dims.validate();
    Rng rng(seed);
    CaptionModel m;
    m.dims = dims;
    m.vocab = std::move(vocab);
    m.encoder = EncoderParams::init(dims, rng);
    m.decoder = DecoderParams::init(dims, rng);
    m.reconstructor = ReconstructorParams::init(dims, rng);
    return m;
  }

  std::vector<Parameter*> encoder_decoder_parameters() {
    auto out = encoder.parameters();
    for (Parameter* p : decoder.parameters()) out.push_back(p);
    return out;
  }
  std::vector<Parameter*> reconstructor_parameters() { return reconstructor.parameters(); }

  std::vector<Parameter*> parameters() {
    auto out = encoder_decoder_parameters();
    for (Parameter* p : reconstructor_parameters()) out.push_back(p);
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (Parameter* p : const_cast<CaptionModel*>(this)->parameters()) out.push_back(p);
    return out;
  }

  EncodedImage encode(const Tensor& image) const { return capforge::encode(encoder, image); }
};

}  // namespace capforge
