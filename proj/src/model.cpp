// SPDX-License-Identifier: Apache-2.0
#include "dualvc/model.hpp"

namespace dualvc {

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.encoder.input_dim = 3;
  c.encoder.bank_kernel_sizes = {1, 2, 3};
  c.encoder.bank_channels = 2;
  c.encoder.projection_channels = 4;
  c.encoder.highway_layers = 2;
  c.encoder.hidden = 4;
  c.encoder.depthwise_kernel = 3;
  c.decoder.latent_dim = 4;
  c.decoder.n_speakers = 2;
  c.decoder.speaker_dim = 2;
  c.decoder.conv_blocks = 1;
  c.decoder.conv_channels = 4;
  c.decoder.depthwise_kernel = 3;
  c.decoder.prenet = {4, 3};
  c.decoder.gru_hidden = 4;
  c.decoder.output_dim = 3;
  c.hpc.steps = 2;
  c.hpc.negatives = 3;
  c.hpc.gnet_hidden = 3;
  return c;
}

template class DualVcModel<float>;
template class DualVcModel<double>;

}  // namespace dualvc
