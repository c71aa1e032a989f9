//! Simulated wireless link.
//!
//! Each delivered packet carries a CSI sample synthesized as
//! `hash(link_seed || sender || receiver || seq)`, where `seq` is a per-link
//! counter owned by the channel. The channel never sees protocol keys.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, CsiSample};
use crate::protocol::wire::ProtocolMessage;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EndpointId(pub u32);

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ep{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    #[serde(with = "crate::hexser")]
    pub link_seed: [u8; 32],
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default = "default_true")]
    pub eavesdropper_decorrelation: bool,
}

fn default_true() -> bool {
    true
}

impl ChannelConfig {
    pub fn lossless(link_seed: [u8; 32]) -> Self {
        Self {
            link_seed,
            loss_rate: 0.0,
            eavesdropper_decorrelation: true,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if (0.0..=1.0).contains(&self.loss_rate) {
            Ok(())
        } else {
            Err(ChannelError::InvalidLossRate(self.loss_rate))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("loss rate {0} outside [0, 1]")]
    InvalidLossRate(f64),
    #[error("packet {sequence} from {sender} to {receiver} was lost")]
    Dropped {
        sender: EndpointId,
        receiver: EndpointId,
        sequence: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryEvent {
    pub message: ProtocolMessage,
    pub csi_at_receiver: CsiSample,
    pub sim_time: u64,
    pub sender: EndpointId,
    pub receiver: EndpointId,
    pub sequence: u64,
}

#[derive(Clone, Debug)]
pub struct Channel {
    config: ChannelConfig,
    sequences: BTreeMap<(EndpointId, EndpointId), u64>,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Result<Self, ChannelError> {
        config.validate()?;
        Ok(Self {
            config,
            sequences: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    fn csi(&self, sender: EndpointId, receiver: EndpointId, sequence: u64) -> CsiSample {
        let mut buf = Vec::with_capacity(48);
        buf.extend_from_slice(&self.config.link_seed);
        buf.extend_from_slice(&sender.0.to_be_bytes());
        buf.extend_from_slice(&receiver.0.to_be_bytes());
        buf.extend_from_slice(&sequence.to_be_bytes());
        CsiSample::from_bytes(*hash(&buf).as_bytes())
    }

    fn is_lost(&self, sender: EndpointId, receiver: EndpointId, sequence: u64) -> bool {
        if self.config.loss_rate <= 0.0 {
            return false;
        }
        let mut buf = Vec::with_capacity(52);
        buf.extend_from_slice(&self.config.link_seed);
        buf.extend_from_slice(b"loss");
        buf.extend_from_slice(&sender.0.to_be_bytes());
        buf.extend_from_slice(&receiver.0.to_be_bytes());
        buf.extend_from_slice(&sequence.to_be_bytes());
        let digest = hash(&buf);
        let draw = u64::from_be_bytes(digest.as_bytes()[..8].try_into().unwrap());
        // uniform in [0, 1)
        let u = (draw >> 11) as f64 / (1u64 << 53) as f64;
        u < self.config.loss_rate
    }

    /// Send one packet. The link sequence number advances whether or not the packet survives.
    pub fn transmit(
        &mut self,
        sender: EndpointId,
        receiver: EndpointId,
        message: ProtocolMessage,
        sim_time: u64,
    ) -> Result<DeliveryEvent, ChannelError> {
        assert_ne!(sender, receiver, "an endpoint cannot transmit to itself");
        let counter = self.sequences.entry((sender, receiver)).or_insert(0);
        let sequence = *counter;
        *counter += 1;
        if self.is_lost(sender, receiver, sequence) {
            return Err(ChannelError::Dropped {
                sender,
                receiver,
                sequence,
            });
        }
        Ok(DeliveryEvent {
            message,
            csi_at_receiver: self.csi(sender, receiver, sequence),
            sim_time,
            sender,
            receiver,
            sequence,
        })
    }

    /// The CSI a third endpoint measures for the same packet.
    pub fn observe_as_eavesdropper(&self, event: &DeliveryEvent, eve: EndpointId) -> CsiSample {
        assert!(
            eve != event.sender && eve != event.receiver,
            "eavesdropper must differ from both link endpoints"
        );
        if !self.config.eavesdropper_decorrelation {
            return event.csi_at_receiver;
        }
        let mut buf = Vec::with_capacity(56);
        buf.extend_from_slice(&self.config.link_seed);
        buf.extend_from_slice(b"eve");
        buf.extend_from_slice(&event.sender.0.to_be_bytes());
        buf.extend_from_slice(&event.receiver.0.to_be_bytes());
        buf.extend_from_slice(&eve.0.to_be_bytes());
        buf.extend_from_slice(&event.sequence.to_be_bytes());
        CsiSample::from_bytes(*hash(&buf).as_bytes())
    }
}
