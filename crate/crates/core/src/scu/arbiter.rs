/// Packet-granular round-robin over up to 32 slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arbiter {
    slots: u8,
    last_granted: u8,
    participants: u32,
}

impl Arbiter {
    pub fn new(slots: u8) -> Self {
        assert!((1..=32).contains(&slots), "arbiter supports 1..=32 slots");
        Arbiter { slots, last_granted: slots - 1, participants: 0 }
    }

    /// Starts the rotation as if `last` had just been served.
    pub fn with_last_granted(mut self, last: u8) -> Self {
        assert!(last < self.slots);
        self.last_granted = last;
        self
    }

    pub fn slots(&self) -> u8 {
        self.slots
    }

    pub fn last_granted(&self) -> u8 {
        self.last_granted
    }

    pub fn set_backlogged(&mut self, idx: u8, backlogged: bool) {
        assert!(idx < self.slots);
        if backlogged {
            self.participants |= 1 << idx;
        } else {
            self.participants &= !(1 << idx);
        }
    }

    pub fn is_backlogged(&self, idx: u8) -> bool {
        self.participants & (1 << idx) != 0
    }

    pub fn any_backlogged(&self) -> bool {
        self.participants != 0
    }

    /// Next backlogged slot after the last one served, cyclically.
    pub fn grant(&mut self) -> Option<u8> {
        if self.participants == 0 {
            return None;
        }
        let n = self.slots as u32;
        let start = self.last_granted as u32 + 1;
        let idx = (0..n).map(|k| ((start + k) % n) as u8).find(|&i| self.is_backlogged(i))?;
        self.last_granted = idx;
        Some(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with(parts: &[u8], slots: u8, last: u8) -> Arbiter {
        let mut a = Arbiter::new(slots).with_last_granted(last);
        for &p in parts {
            a.set_backlogged(p, true);
        }
        a
    }

    #[test]
    fn wraps_around() {
        assert_eq!(with(&[0, 1, 2, 3], 4, 3).grant(), Some(0));
    }

    #[test]
    fn skips_idle() {
        let mut a = with(&[1, 3], 16, 1);
        let seq: alloc::vec::Vec<_> = (0..3).map(|_| a.grant().unwrap()).collect();
        assert_eq!(seq, [3, 1, 3]);
    }

    #[test]
    fn idle_arbiter_grants_nothing() {
        assert_eq!(Arbiter::new(16).grant(), None);
    }

    #[test]
    fn four_thousand_grants_split_evenly() {
        let mut a = with(&[0, 1, 2, 3], 16, 15);
        let mut counts = [0u32; 4];
        for _ in 0..4000 {
            counts[a.grant().unwrap() as usize] += 1;
        }
        assert_eq!(counts, [1000; 4]);
    }

    proptest! {
        #[test]
        fn backlogged_set_within_one(set in 1u32..(1 << 16), last in 0u8..16, n in 1usize..500) {
            let mut a = Arbiter::new(16).with_last_granted(last);
            for i in 0..16 {
                a.set_backlogged(i, set & (1 << i) != 0);
            }
            let mut counts = [0u32; 16];
            for _ in 0..n {
                counts[a.grant().unwrap() as usize] += 1;
            }
            let members: alloc::vec::Vec<u32> = (0..16).filter(|i| set & (1 << i) != 0).map(|i| counts[i]).collect();
            let max = *members.iter().max().unwrap();
            let min = *members.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert_eq!(counts.iter().sum::<u32>(), n as u32);
        }
    }
}
