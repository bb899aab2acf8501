#include <benchmark/benchmark.h>

#include "fsvfm/backbone.hpp"
#include "fsvfm/masking.hpp"
#include "fsvfm/region_atlas.hpp"
#include "fsvfm/synth_data.hpp"

using namespace fsvfm;

namespace {
FaceSample one_face(int size, int patch) {
  SynthConfig c;
  c.n_real = 1;
  c.image_size = size;
  c.patch_size = patch;
  return generate_synthetic(c)[0];
}
}  // namespace

static void BM_SampleMask(benchmark::State& state) {
  const auto strategy = static_cast<MaskStrategy>(state.range(0));
  const FaceSample f = one_face(224, 16);
  const PatchRegionIndex idx = patchify_parsing(f.parsing, 16);
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(sample_mask(strategy, idx, 0.75, rng));
  state.SetLabel(strategy_name(strategy));
}
BENCHMARK(BM_SampleMask)->DenseRange(0, 4);

static void BM_PatchifyParsing(benchmark::State& state) {
  const FaceSample f = one_face(224, 16);
  for (auto _ : state) benchmark::DoNotOptimize(patchify_parsing(f.parsing, 16));
}
BENCHMARK(BM_PatchifyParsing);

static void BM_PatchifyImage(benchmark::State& state) {
  const FaceSample f = one_face(224, 16);
  for (auto _ : state) benchmark::DoNotOptimize(patchify_image(f.image, 16));
}
BENCHMARK(BM_PatchifyImage);

// Micro encoder over the visible quarter, the pre-training hot path.
static void BM_EncoderForward(benchmark::State& state) {
  const bool masked = state.range(0) != 0;
  ParameterSet ps;
  Rng init(2);
  const ViTProfile prof = ViTProfile::micro();
  VisionEncoder enc(ps, "encoder", prof, init);
  ps.set_trainable(false);
  const FaceSample f = one_face(prof.image_size, prof.patch_size);
  const Matrix patches = patchify_image(f.image, prof.patch_size);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(prof.n_patches()), 0);
  if (masked) {
    Rng rng(3);
    mask = sample_mask(MaskStrategy::crfr_p, patchify_parsing(f.parsing, prof.patch_size), 0.75, rng).mask;
  }
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(enc.embed_visible(patches, mask)).tokens.value());
}
BENCHMARK(BM_EncoderForward)->Arg(0)->Arg(1);
BENCHMARK_MAIN();
