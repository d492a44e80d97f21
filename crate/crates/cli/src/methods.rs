use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use desloc::sync::SyncPolicies;

/// A named synchronization strategy accepted by `compare`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MethodSpec {
    Ddp,
    LocalAdam(u64),
    /// Parameter period followed by one period per optimizer state.
    DesLoc(Vec<u64>),
    FavgPlusOpt(u64),
    FavgMinusOpt(u64),
}

impl MethodSpec {
    /// The policies this method means for an optimizer with `state_count` states.
    pub fn policies(&self, state_count: usize) -> Result<SyncPolicies> {
        Ok(match self {
            MethodSpec::Ddp => SyncPolicies::ddp(state_count),
            MethodSpec::LocalAdam(k) => SyncPolicies::local(*k, state_count),
            MethodSpec::DesLoc(periods) => {
                if periods.len() != state_count + 1 {
                    bail!(
                        "{self} needs {} periods (parameters plus {state_count} states)",
                        state_count + 1
                    );
                }
                SyncPolicies::des_loc(periods[0], &periods[1..])
            }
            MethodSpec::FavgPlusOpt(k) => SyncPolicies::favg_keep_states(*k, state_count),
            MethodSpec::FavgMinusOpt(k) => SyncPolicies::favg_reset_states(*k, state_count),
        })
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Ddp => write!(f, "ddp"),
            MethodSpec::LocalAdam(k) => write!(f, "local_adam({k})"),
            MethodSpec::DesLoc(p) => {
                let joined: Vec<String> = p.iter().map(u64::to_string).collect();
                write!(f, "des_loc({})", joined.join(";"))
            }
            MethodSpec::FavgPlusOpt(k) => write!(f, "favg_plus_opt({k})"),
            MethodSpec::FavgMinusOpt(k) => write!(f, "favg_minus_opt({k})"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = anyhow::Error;

    /// Accepts `ddp`, `local_adam(K)`, `des_loc(Kx,Ku,Kv)`, `favg_plus_opt(K)`
    /// and `favg_minus_opt(K)`; periods may also be separated by `;`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| anyhow!("`{s}`: missing closing parenthesis"))?;
                (&s[..open], &close[open + 1..])
            }
            None => (s, ""),
        };
        let periods: Vec<u64> = args
            .split([',', ';'])
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(|a| {
                a.parse::<u64>()
                    .ok()
                    .filter(|&k| k > 0)
                    .ok_or_else(|| anyhow!("`{s}`: period `{a}` is not a positive integer"))
            })
            .collect::<Result<_>>()?;
        let single = || -> Result<u64> {
            match periods.as_slice() {
                [k] => Ok(*k),
                _ => bail!("`{s}` takes exactly one period"),
            }
        };
        match name.trim() {
            "ddp" if periods.is_empty() => Ok(MethodSpec::Ddp),
            "ddp" => bail!("`ddp` takes no period"),
            "local_adam" => Ok(MethodSpec::LocalAdam(single()?)),
            "favg_plus_opt" => Ok(MethodSpec::FavgPlusOpt(single()?)),
            "favg_minus_opt" => Ok(MethodSpec::FavgMinusOpt(single()?)),
            "des_loc" if periods.len() >= 2 => Ok(MethodSpec::DesLoc(periods)),
            "des_loc" => bail!("`des_loc` needs a parameter period and one period per state"),
            other => bail!(
                "unknown method `{other}`; expected ddp, local_adam(K), des_loc(Kx,Ku,Kv), \
                 favg_plus_opt(K) or favg_minus_opt(K)"
            ),
        }
    }
}
