use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// One metered transmission. Broadcasts carry no client id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MeterEvent {
    pub round: usize,
    pub client: Option<usize>,
    pub direction: Direction,
    pub bits: u128,
}

/// Append-only log of every bit exchanged with the parameter server.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PayloadMeter {
    events: Vec<MeterEvent>,
    uplink_bits: u128,
    downlink_bits: u128,
}

impl PayloadMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_uplink(&mut self, round: usize, client: usize, bits: u128) {
        self.uplink_bits += bits;
        self.events.push(MeterEvent {
            round,
            client: Some(client),
            direction: Direction::Uplink,
            bits,
        });
    }

    pub fn record_downlink(&mut self, round: usize, bits: u128) {
        self.downlink_bits += bits;
        self.events.push(MeterEvent {
            round,
            client: None,
            direction: Direction::Downlink,
            bits,
        });
    }

    pub fn uplink_bits(&self) -> u128 {
        self.uplink_bits
    }

    pub fn downlink_bits(&self) -> u128 {
        self.downlink_bits
    }

    pub fn events(&self) -> &[MeterEvent] {
        &self.events
    }

    pub fn uplink_events(&self) -> usize {
        self.events.iter().filter(|e| e.direction == Direction::Uplink).count()
    }

    pub fn downlink_events(&self) -> usize {
        self.events.len() - self.uplink_events()
    }

    /// Recomputes both totals from the event log.
    pub fn totals_from_events(&self) -> (u128, u128) {
        self.events.iter().fold((0, 0), |(up, down), e| match e.direction {
            Direction::Uplink => (up + e.bits, down),
            Direction::Downlink => (up, down + e.bits),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_track_events() {
        let mut m = PayloadMeter::new();
        m.record_downlink(1, 100);
        m.record_uplink(1, 3, 40);
        m.record_uplink(1, 5, 40);
        assert_eq!(m.uplink_bits(), 80);
        assert_eq!(m.downlink_bits(), 100);
        assert_eq!(m.totals_from_events(), (80, 100));
        assert_eq!(m.uplink_events(), 2);
        assert_eq!(m.downlink_events(), 1);
    }
}
