//! Flattening of middle and bottom codes into one sequence at the top-level
//! frame rate: each group holds two middle codes then four bottom codes.

use crate::error::{Error, Result};

pub const GROUP: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Mid,
    Bot,
}

/// Level of 1-based mixed position `pos`.
pub fn level_at(pos: usize) -> Level {
    if tick(pos) <= 2 {
        Level::Mid
    } else {
        Level::Bot
    }
}

/// Slot `1..=6` of 1-based position `pos` within its group.
pub fn tick(pos: usize) -> usize {
    debug_assert!(pos >= 1);
    (pos - 1) % GROUP + 1
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedSequence {
    pub tokens: Vec<usize>,
}

impl MixedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        (1..=self.tokens.len()).map(level_at)
    }

    pub fn ticks(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.tokens.len()).map(tick)
    }
}

pub fn interleave(mid: &[usize], bot: &[usize]) -> Result<MixedSequence> {
    if !mid.len().is_multiple_of(2) || bot.len() != 2 * mid.len() {
        return Err(Error::Input(format!(
            "interleave needs 2L middle and 4L bottom codes, got {} and {}",
            mid.len(),
            bot.len()
        )));
    }
    let mut tokens = Vec::with_capacity(mid.len() * 3);
    for (m, b) in mid.chunks(2).zip(bot.chunks(4)) {
        tokens.extend_from_slice(m);
        tokens.extend_from_slice(b);
    }
    Ok(MixedSequence { tokens })
}

pub fn deinterleave(mix: &MixedSequence) -> Result<(Vec<usize>, Vec<usize>)> {
    if !mix.tokens.len().is_multiple_of(GROUP) {
        return Err(Error::Input(format!(
            "mixed sequence length {} is not a multiple of {GROUP}",
            mix.tokens.len()
        )));
    }
    let l = mix.tokens.len() / GROUP;
    let (mut mid, mut bot) = (Vec::with_capacity(2 * l), Vec::with_capacity(4 * l));
    for g in mix.tokens.chunks(GROUP) {
        mid.extend_from_slice(&g[..2]);
        bot.extend_from_slice(&g[2..]);
    }
    Ok((mid, bot))
}

/// Number of bottom codes preceding the `i`-th (1-based) middle code.
pub fn bottoms_before_mid(i: usize) -> usize {
    4 * (i.div_ceil(2) - 1)
}
