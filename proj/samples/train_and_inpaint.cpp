// Library walkthrough: a short pretraining run on the fixture corpus, a
// checkpoint round trip, then native-resolution inpainting of one image.
//
//   train_and_inpaint [corpus_dir] [out_dir] [steps]
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>

#include "rwinpaint/rwinpaint.hpp"

namespace fs = std::filesystem;
using namespace rwinpaint;

int main(int argc, char** argv) {
  const fs::path corpus_dir = argc > 1 ? argv[1] : RWINPAINT_FIXTURES "/corpus";
  const fs::path out_dir = argc > 2 ? argv[2] : "sample_out";
  const int steps = argc > 3 ? std::stoi(argv[3]) : 20;
  fs::create_directories(out_dir);

  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.batch_size = 8;
  cfg.generator.base_width = 8;
  cfg.generator.levels = 2;
  cfg.discriminator.levels = 2;
  cfg.discriminator.base_width = 8;
  cfg.phase_unit = PhaseUnit::steps;
  cfg.pretrain_steps = static_cast<std::uint64_t>(steps);  // generator only

  const ImageCorpus<float> corpus(build_manifest(corpus_dir, "", cfg.image_size));
  const auto fx = make_extractor(cfg.features);
  TrainState state = init_state(cfg);
  std::vector<std::size_t> idx(std::min<std::size_t>(corpus.size(), 8));
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = corpus.gather(idx);
  for (int i = 0; i < steps; ++i) {
    const LossReport r = train_step(batch, state, cfg, fx);
    if (i % 5 == 0 || i + 1 == steps) std::printf("step %3d  L_r %.4f  total %.4f\n", i, r.reconstruction, r.total);
  }

  const fs::path ckpt = out_dir / "sample.ckpt";
  save_checkpoint(state, cfg, ckpt);
  const InferenceModel model = load_inference_model(ckpt);
  std::printf("model %s\n", model.id.c_str());

  // Any size works: the image is resized for the network and composited back.
  const cv::Mat image = read_raster(corpus.manifest().files.front(), cv::IMREAD_COLOR);
  MaskConfig mc;
  mc.kind = MaskKind::contiguous;
  mc.ratio_lo = 0.15;
  mc.ratio_hi = 0.25;
  std::mt19937_64 rng(3);
  const Mask mask = gen_mask(image.rows, image.cols, mc, rng);
  write_mask(out_dir / "mask.png", mask);
  write_raster(out_dir / "result.png", inpaint_native(model, image, mask));
  std::printf("missing %.1f%% -> %s\n", 100 * mask_ratio(mask), (out_dir / "result.png").c_str());
}
