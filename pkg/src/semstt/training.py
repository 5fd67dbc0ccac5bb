"""Training stages, the evaluation loop, and CSV reporting.

Two-stage schedule:
  stage 1 trains the transmitter (conv/BLSTM encoder, attention decoder,
  token readout) with the channel bypassed: teacher-forced cross-entropy
  on the decoder logits, PAD steps masked out.
  stage 2 freezes the transmitter, replays its latent states as
  constants, and trains the channel encoder/decoder plus the receiver
  readout through a simulated channel at a per-batch random SNR.
A joint mode (everything at once, channel in the loop) exists only to
compare convergence against the two-stage schedule.

Evaluation walks the full transmission pipeline per sentence: greedy
decode, prune redundant steps, channel-encode, transmit, equalize,
channel-decode, read out tokens, then score WER and similarity against
the reference transcript. Work that depends only on the transmitter
(everything up to the channel) is computed once per sentence and reused
across the SNR grid.

Every random draw comes from a per-purpose route off the master seed, so
repeated runs produce identical logs, checkpoints, and reports.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .channel import ChannelSignal, draw_noise, realize, send
from .corpus import Corpus, N_SPECIALS, batch_pad
from .errors import ConfigError, NumericsError, ShapeError
from .frontend import SpectrumBatch
from .metrics import corpus_wer, similarity, wer
from .model import LatentSemantics, Model
from .prune import prune_steps, prune_transcript, savings_stats
from .seeding import rng_stream

# Seed routes 0-2 belong to corpus prototypes, corpus sentences, and
# parameter init. Training and evaluation own the rest.
_ROUTE_SHUFFLE1 = 3   # stage-1 epoch shuffles
_ROUTE_SHUFFLE2 = 4   # stage-2 / joint epoch shuffles
_ROUTE_SNR = 5        # per-batch SNR draws
_ROUTE_CHANNEL = 6    # per-item training channel realizations
_ROUTE_DEV = 7        # through-channel dev scoring realizations
_ROUTE_EVAL = 8       # evaluation grid realizations


# ---------------------------------------------------------------------------
# loss and scoring helpers
# ---------------------------------------------------------------------------


def masked_cross_entropy(logits: ad.Tensor, targets: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """Mean negative log-likelihood over mask==1 steps; logits (B, U, V)."""
    weight = float(mask.sum())
    if weight < 1:
        raise ShapeError("masked_cross_entropy: mask selects no steps")
    picked = ad.take_last(ad.log_softmax(logits), targets)
    return ad.scale(ad.sum_all(ad.mul(picked, ad.constant(mask))), -1.0 / weight)


def greedy_transcribe(model: Model, sentence):
    """Greedy decode one sentence: (token ids (q,), states (q, d), attention (q, T))."""
    with ad.no_grad():
        feats = model.encode(SpectrumBatch.from_items([sentence.spectrum]))
        aligned = model.decode_sequence(feats, mode="greedy")
    return aligned.argmax_tokens()[0], aligned.states.data[0], aligned.attention.data[0]


def transmitter_wer(model: Model, sentences) -> float:
    """Channel-free corpus WER of greedy transcripts vs. reference content."""
    pairs = []
    for s in sentences:
        ids, _, _ = greedy_transcribe(model, s)
        pairs.append((prune_transcript(s.tokens), prune_transcript(ids)))
    return corpus_wer(pairs)


def draw_snr(lo: float, hi: float, seed: int, epoch: int, batch: int) -> float:
    """The per-batch training SNR: uniform in [lo, hi] on its own route."""
    return lo + (hi - lo) * float(rng_stream(seed, _ROUTE_SNR, epoch, batch).random())


def _equalized_noise(real, n: int) -> np.ndarray:
    """The additive term the receiver sees after perfect-CSI equalization.

    Drawn from the exact stream transmit() would use, so the in-graph
    training channel and the simulator agree realization for realization.
    """
    return draw_noise(n, real.sigma2, real.seed, *real.route) / real.h


def _interleave(symbols: np.ndarray, k: int) -> np.ndarray:
    """Complex (c*k,) -> real (c, 2k) with (re, im) pairs interleaved."""
    pairs = np.stack([symbols.real, symbols.imag], axis=-1)
    return pairs.reshape(-1, 2 * k)


def _receiver_loss(model: Model, lat: LatentSemantics, token_ids: np.ndarray, real) -> ad.Tensor:
    """Summed receiver NLL for one sentence through one channel realization."""
    sym, _ = model.channel_encode(lat)
    noise = _interleave(_equalized_noise(real, lat.c * model.config.k), model.config.k)
    logits, _ = model.semantic_decode(model.channel_decode(ad.add(sym, ad.constant(noise))))
    return ad.sum_all(ad.take_last(ad.log_softmax(logits), token_ids))


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRow:
    epoch: int       # 1-based
    loss: float      # mean per-step training NLL
    dev_wer: float


@dataclass(frozen=True)
class TrainResult:
    rows: tuple
    checkpoint: str
    best_wer: float
    best_epoch: int


_LOG_HEADER = "epoch,loss,dev_wer"


def _write_log(path, rows) -> None:
    lines = [_LOG_HEADER] + [f"{r.epoch},{r.loss:.6f},{r.dev_wer:.6f}" for r in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def epochs_to_target(rows, threshold: float):
    """First 1-based epoch whose dev WER is <= threshold, or None."""
    for r in rows:
        if r.dev_wer <= threshold:
            return r.epoch
    return None


def check_compatible(model: Model, corpus: Corpus) -> None:
    if model.config.vocab_size != corpus.config.vocab_size + N_SPECIALS:
        raise ConfigError(
            f"model expects a vocabulary of {model.config.vocab_size} ids but the corpus "
            f"provides {corpus.config.vocab_size} words + {N_SPECIALS} specials")


def _batches(items, order, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield [items[int(i)] for i in order[start:start + batch_size]]


def _padded(group):
    width = max(s.tokens.size for s in group) + 1
    return batch_pad(group, width)


def _run_epochs(epochs, checkpoint, save, score, one_epoch, echo):
    """Shared epoch driver: train, score dev, keep the best checkpoint.

    On numeric failure training aborts; the checkpoint on disk is the
    last good one.
    """
    rows, best_wer, best_epoch = [], np.inf, 0
    for epoch in range(1, epochs + 1):
        try:
            loss = one_epoch(epoch - 1)
            dev = score()
        except NumericsError as exc:
            raise NumericsError(
                f"training diverged in epoch {epoch}: {exc}; "
                f"last good checkpoint: {checkpoint if best_epoch else 'none'}") from exc
        rows.append(EpochRow(epoch, loss, dev))
        if dev < best_wer:
            best_wer, best_epoch = dev, epoch
            save(checkpoint)
        if echo:
            echo(f"epoch {epoch}: loss {loss:.4f} dev_wer {dev:.4f}")
    return TrainResult(tuple(rows), checkpoint, best_wer, best_epoch)


def train_stage1(model: Model, corpus: Corpus, epochs: int, batch_size: int,
                 seed: int, out_dir, echo=None,
                 rho: float = 0.95, eps: float = 1e-6) -> TrainResult:
    """Stage 1: transmitter only, channel bypassed.

    Teacher-forced cross-entropy on the decoder logits updates the
    encoder, attention, decoder, and token readout. Dev WER is greedy
    decoding without any channel; the best-dev checkpoint is kept.
    """
    check_compatible(model, corpus)
    train, dev = corpus.split("train"), corpus.split("dev")
    opt = ad.Adadelta(model.transmitter_params(), rho=rho, eps=eps)
    os.makedirs(out_dir, exist_ok=True)

    def one_epoch(e):
        order = rng_stream(seed, _ROUTE_SHUFFLE1, e).permutation(len(train))
        total, steps = 0.0, 0.0
        for group in _batches(train, order, batch_size):
            batch, targets, mask = _padded(group)
            aligned = model.decode_sequence(model.encode(batch), targets=targets)
            loss = masked_cross_entropy(aligned.logits, targets, mask)
            opt.step(ad.backward(loss, params=opt.params))
            total += float(loss.data) * mask.sum()
            steps += mask.sum()
        return float(total / steps)

    result = _run_epochs(epochs, os.path.join(out_dir, "stage1.ckpt"), model.save,
                         lambda: transmitter_wer(model, dev), one_epoch, echo)
    _write_log(os.path.join(out_dir, "train1_log.csv"), result.rows)
    return result


def _detached_latents(model: Model, sentences, batch_size: int):
    """Teacher-forced latents with the graph dropped, pruned to content steps.

    Returns one (latents (c, d), kept step indices, kept token ids) per
    sentence. Valid only while the transmitter stays frozen.
    """
    out = []
    for group in _batches(sentences, np.arange(len(sentences)), batch_size):
        batch, targets, _ = _padded(group)
        with ad.no_grad():
            aligned = model.decode_sequence(model.encode(batch), targets=targets)
        for i in range(len(group)):
            kept, _ = prune_steps(targets[i])
            out.append((aligned.states.data[i, kept].copy(), kept, targets[i, kept]))
    return out


def _greedy_cache(model: Model, sentences):
    """Greedy decode + prune per sentence: (reference, kept states, kept).

    Caches only work that stays valid while the encoder/attention/decoder
    stack is frozen; the channel encoding is redone per use because the
    channel codec keeps training.
    """
    cache = []
    for s in sentences:
        ids, states, _ = greedy_transcribe(model, s)
        kept, _ = prune_steps(ids)
        cache.append((prune_transcript(s.tokens), states[kept].copy(), kept))
    return cache


def _receive_transcript(model: Model, signal: ChannelSignal, real) -> list:
    """Receiver side of one transmission: decode symbols to content tokens."""
    y = send(signal, real, csi=True)
    with ad.no_grad():
        _, ids = model.semantic_decode(model.channel_decode(y))
    return prune_transcript(ids)


def _channel_dev_wer(model: Model, cache, kind: str, snr_db: float, seed: int, epoch: int) -> float:
    """Corpus WER of cached decodes, encoded and sent with current weights."""
    pairs = []
    for si, (ref, states, kept) in enumerate(cache):
        if not kept.size:
            pairs.append((ref, []))
            continue
        with ad.no_grad():
            _, signal = model.channel_encode(LatentSemantics(ad.constant(states), kept))
        real = realize(kind, snr_db, seed, _ROUTE_DEV, epoch, si)
        pairs.append((ref, _receive_transcript(model, signal, real)))
    return corpus_wer(pairs)


def train_stage2(model: Model, corpus: Corpus, epochs: int, batch_size: int,
                 kind: str, snr_lo: float, snr_hi: float, dev_snr: float,
                 seed: int, out_dir, echo=None,
                 rho: float = 0.95, eps: float = 1e-6) -> TrainResult:
    """Stage 2: channel encoder/decoder and receiver readout only.

    The transmitter is frozen: its teacher-forced latents are computed
    once, detached, and replayed every epoch. Each batch draws one SNR
    uniformly from [snr_lo, snr_hi]; each sentence gets its own channel
    realization. Dev WER runs the real transmit/equalize path at dev_snr.
    """
    check_compatible(model, corpus)
    train, dev = corpus.split("train"), corpus.split("dev")
    opt = ad.Adadelta(model.channel_params(), rho=rho, eps=eps)
    os.makedirs(out_dir, exist_ok=True)
    latents = _detached_latents(model, train, batch_size)
    dev_cache = _greedy_cache(model, dev)

    def one_epoch(e):
        order = rng_stream(seed, _ROUTE_SHUFFLE2, e).permutation(len(latents))
        total, steps = 0.0, 0.0
        for b, group in enumerate(_batches(latents, order, batch_size)):
            snr = draw_snr(snr_lo, snr_hi, seed, e, b)
            nll, count = None, 0
            for i, (states, kept, tokens) in enumerate(group):
                lat = LatentSemantics(ad.constant(states), kept)
                real = realize(kind, snr, seed, _ROUTE_CHANNEL, e, b, i)
                item = _receiver_loss(model, lat, tokens, real)
                nll = item if nll is None else ad.add(nll, item)
                count += tokens.size
            loss = ad.scale(nll, -1.0 / count)
            opt.step(ad.backward(loss, params=opt.params))
            total += float(loss.data) * count
            steps += count
        return float(total / steps)

    result = _run_epochs(
        epochs, os.path.join(out_dir, "stage2.ckpt"), model.save,
        lambda: _channel_dev_wer(model, dev_cache, kind, dev_snr, seed, 0),
        one_epoch, echo)
    _write_log(os.path.join(out_dir, "train2_log.csv"), result.rows)
    return result


def train_joint(model: Model, corpus: Corpus, epochs: int, batch_size: int,
                kind: str, snr_lo: float, snr_hi: float, dev_snr: float,
                seed: int, out_dir, echo=None,
                rho: float = 0.95, eps: float = 1e-6) -> TrainResult:
    """Whole network at once, channel in the loop (comparison baseline).

    The loss is the transmitter's teacher-forced cross-entropy plus the
    receiver's cross-entropy on pruned steps through the channel; one
    optimizer covers every parameter. Dev WER is scored exactly like
    stage 2, with transmitter work recomputed each epoch since nothing
    is frozen.
    """
    check_compatible(model, corpus)
    train, dev = corpus.split("train"), corpus.split("dev")
    opt = ad.Adadelta(dict(model.params), rho=rho, eps=eps)
    os.makedirs(out_dir, exist_ok=True)
    d = model.config.state_dim

    def one_epoch(e):
        order = rng_stream(seed, _ROUTE_SHUFFLE2, e).permutation(len(train))
        total, steps = 0.0, 0.0
        for b, group in enumerate(_batches(train, order, batch_size)):
            batch, targets, mask = _padded(group)
            aligned = model.decode_sequence(model.encode(batch), targets=targets)
            loss = masked_cross_entropy(aligned.logits, targets, mask)
            snr = draw_snr(snr_lo, snr_hi, seed, e, b)
            nll, count = None, 0
            for i in range(len(group)):
                kept, _ = prune_steps(targets[i])
                row = ad.reshape(ad.slice_axis(aligned.states, 0, i, i + 1),
                                 (targets.shape[1], d))
                lat = LatentSemantics(ad.gather_rows(row, kept), kept)
                real = realize(kind, snr, seed, _ROUTE_CHANNEL, e, b, i)
                item = _receiver_loss(model, lat, targets[i, kept], real)
                nll = item if nll is None else ad.add(nll, item)
                count += kept.size
            loss = ad.add(loss, ad.scale(nll, -1.0 / count))
            opt.step(ad.backward(loss, params=opt.params))
            total += float(loss.data) * count
            steps += count
        return float(total / steps)

    result = _run_epochs(
        epochs, os.path.join(out_dir, "joint.ckpt"), model.save,
        lambda: _channel_dev_wer(model, _greedy_cache(model, dev), kind, dev_snr, seed, 0),
        one_epoch, echo)
    _write_log(os.path.join(out_dir, "joint_log.csv"), result.rows)
    return result


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def baseline_rate(config) -> int:
    """Fixed symbols per spectrum frame matching the proposed per-unit cost.

    The proposed system spends k complex symbols per surviving decoder
    step, and one step covers `downsample` input frames, so the matched
    fixed-rate baseline spends round(k / downsample) symbols per frame.
    """
    return max(1, round(config.k / config.downsample))


def baseline_symbol_count(spectrum: np.ndarray, rate_per_frame: int) -> int:
    """Symbols a fixed-rate-per-frame coder would spend on this spectrum."""
    if rate_per_frame < 1:
        raise ConfigError(f"rate_per_frame must be >= 1, got {rate_per_frame}")
    return int(spectrum.shape[0]) * int(rate_per_frame)


@dataclass(frozen=True)
class EvalRow:
    snr_db: float
    channel: str
    sentence: int
    wer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    similarity: float
    symbols: int
    baseline_symbols: int
    raw_steps: int
    kept_steps: int
    cut_by_eos: int
    cut_by_specials: int
    seed: int
    h_re: float
    h_im: float


@dataclass(frozen=True)
class EvalResult:
    rows: tuple            # one per (SNR, sentence), grid order
    prune_reports: tuple   # one per sentence


def evaluate(model: Model, sentences, snrs, kind: str, seed: int,
             noiseless: bool = False, rate_per_frame: int | None = None,
             trace=None) -> EvalResult:
    """Score every test sentence at every SNR through the full pipeline.

    Transmitter-side work (greedy decode, prune, channel encoding) is
    cached per sentence on first use, so only the channel and receiver
    run per grid point. `noiseless` zeroes the noise power (fading, if
    any, still applies and is equalized away); `trace`, when given a
    list, records (sentence, stage) pairs in execution order.
    """
    if not sentences:
        raise ShapeError("evaluate: no sentences")
    rate = baseline_rate(model.config) if rate_per_frame is None else rate_per_frame
    k = model.config.k

    def mark(si, stage):
        if trace is not None:
            trace.append((si, stage))

    cache = {}
    rows = []
    for gi, snr in enumerate(snrs):
        for si, s in enumerate(sentences):
            if si not in cache:
                mark(si, "spectrum")
                ids, states, _ = greedy_transcribe(model, s)
                mark(si, "semantic_encoder")
                kept, report = prune_steps(ids)
                signal = None
                if kept.size:
                    with ad.no_grad():
                        _, signal = model.channel_encode(
                            LatentSemantics(ad.constant(states[kept]), kept))
                mark(si, "channel_encoder")
                cache[si] = (prune_transcript(s.tokens), report, signal)
            ref, report, signal = cache[si]
            h = 1 + 0j
            if signal is None:
                hyp = []
                for stage in ("channel", "channel_decoder", "semantic_decoder"):
                    mark(si, stage)
            else:
                real = realize(kind, float(snr), seed, _ROUTE_EVAL, gi, si)
                if noiseless:
                    real = replace(real, noiseless=True)
                h = real.h
                y = send(signal, real, csi=True)
                mark(si, "channel")
                with ad.no_grad():
                    latents = model.channel_decode(y)
                mark(si, "channel_decoder")
                with ad.no_grad():
                    _, out_ids = model.semantic_decode(latents)
                hyp = prune_transcript(out_ids)
                mark(si, "semantic_decoder")
            breakdown = wer(ref, hyp)
            sim = similarity(ref, hyp)
            mark(si, "metrics")
            rows.append(EvalRow(
                snr_db=float(snr), channel=kind, sentence=si, wer=breakdown.wer,
                substitutions=breakdown.substitutions, deletions=breakdown.deletions,
                insertions=breakdown.insertions, ref_len=breakdown.ref_length,
                similarity=sim, symbols=report.kept_len * k,
                baseline_symbols=baseline_symbol_count(s.spectrum, rate),
                raw_steps=report.raw_len, kept_steps=report.kept_len,
                cut_by_eos=report.cut_by_eos, cut_by_specials=report.cut_by_specials,
                seed=seed, h_re=h.real, h_im=h.imag))
    reports = tuple(cache[si][1] for si in range(len(sentences)))
    return EvalResult(tuple(rows), reports)


def transcribe_once(model: Model, sentence) -> list:
    """The channel-free transcript: greedy decode, prune, receiver readout.

    What evaluate() converges to when the channel adds nothing.
    """
    ids, states, _ = greedy_transcribe(model, sentence)
    kept, _ = prune_steps(ids)
    if not kept.size:
        return []
    with ad.no_grad():
        _, signal = model.channel_encode(LatentSemantics(ad.constant(states[kept]), kept))
        _, out_ids = model.semantic_decode(model.channel_decode(signal))
    return prune_transcript(out_ids)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

EVAL_HEADER = ("snr_db,channel,sentence,wer,substitutions,deletions,insertions,ref_len,"
               "similarity,symbols,baseline_symbols,raw_steps,kept_steps,cut_by_eos,"
               "cut_by_specials,seed,h_re,h_im")
SUMMARY_HEADER = "snr_db,mean_wer,mean_similarity,mean_symbols,mean_baseline_symbols"
PRUNE_HEADER = "raw_steps,kept_steps,eos_fraction,special_fraction,saved_fraction"


def _f(x: float) -> str:
    return f"{x:.6f}"


def summarize(rows):
    """Per-SNR arithmetic means in first-appearance order."""
    order, groups = [], {}
    for r in rows:
        if r.snr_db not in groups:
            order.append(r.snr_db)
            groups[r.snr_db] = []
        groups[r.snr_db].append(r)
    out = []
    for snr in order:
        g = groups[snr]
        out.append((snr,
                    float(np.mean([r.wer for r in g])),
                    float(np.mean([r.similarity for r in g])),
                    float(np.mean([r.symbols for r in g])),
                    float(np.mean([r.baseline_symbols for r in g]))))
    return out


def report(result: EvalResult, out_dir) -> dict:
    """Write eval.csv, summary.csv, and prune.csv; returns their paths."""
    if not result.rows:
        raise ShapeError("report: no rows")
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, f"{name}.csv")
             for name in ("eval", "summary", "prune")}

    lines = [EVAL_HEADER]
    for r in result.rows:
        lines.append(",".join([
            _f(r.snr_db), r.channel, str(r.sentence), _f(r.wer), str(r.substitutions),
            str(r.deletions), str(r.insertions), str(r.ref_len), _f(r.similarity),
            str(r.symbols), str(r.baseline_symbols), str(r.raw_steps), str(r.kept_steps),
            str(r.cut_by_eos), str(r.cut_by_specials), str(r.seed), _f(r.h_re), _f(r.h_im)]))
    _write_lines(paths["eval"], lines)

    lines = [SUMMARY_HEADER]
    for snr, mean_wer, mean_sim, mean_sym, mean_base in summarize(result.rows):
        lines.append(",".join([_f(snr), _f(mean_wer), _f(mean_sim), _f(mean_sym), _f(mean_base)]))
    _write_lines(paths["summary"], lines)

    stats = savings_stats(result.prune_reports)
    _write_lines(paths["prune"], [PRUNE_HEADER, ",".join([
        str(stats["raw_steps"]), str(stats["kept_steps"]), _f(stats["eos_fraction"]),
        _f(stats["special_fraction"]), _f(stats["saved_fraction"])])])
    return paths


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
