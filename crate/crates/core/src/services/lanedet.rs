use std::time::Duration;

use super::{diagnose, publish, Service, ServiceIdentity};
use crate::bus::{BusSession, Envelope};
use crate::clock::Micros;
use crate::framestore::{FrameReader, FrameStoreError, FrameStores};
use crate::messages::{HealthState, ImageNotice, Message, MessageKind, PixelFormat};
use crate::vision::{detect_lane, CameraModel, RgbImage, VisionError, VisionParams};

/// Turns each announced frame into a [`CenterLine`](crate::CenterLine).
pub struct LaneDetector {
    identity: ServiceIdentity,
    stores: FrameStores,
    store_name: String,
    reader: Option<FrameReader>,
    last_seen: u64,
    cam: CameraModel,
    params: VisionParams,
    wait: Duration,
    y_bias: f64,
}

impl LaneDetector {
    pub fn new(
        identity: ServiceIdentity,
        stores: FrameStores,
        store_name: impl Into<String>,
        cam: CameraModel,
        params: VisionParams,
    ) -> Self {
        Self {
            identity,
            stores,
            store_name: store_name.into(),
            reader: None,
            last_seen: 0,
            cam,
            params,
            wait: crate::framestore::DEFAULT_WAIT,
            y_bias: 0.0,
        }
    }

    /// How long to block on the store for a frame newer than the last one.
    pub fn with_wait(mut self, wait: Duration) -> Self {
        self.wait = wait;
        self
    }

    /// Fault injection: shift every published center point sideways.
    pub fn with_y_bias(mut self, meters: f64) -> Self {
        self.y_bias = meters;
        self
    }

    fn process(&mut self, bus: &BusSession, notice: &ImageNotice, now: Micros) -> Result<(), String> {
        if notice.store_name != self.store_name || notice.sequence == self.last_seen {
            return Ok(());
        }
        if notice.sequence < self.last_seen {
            // Either an old notice for a frame we already skipped past, or the
            // producer restarted with a fresh store. A fresh attach tells them apart.
            let fresh = self.stores.attach(&self.store_name).map_err(|e| e.to_string())?;
            if fresh.sequence().map_err(|e| e.to_string())? >= self.last_seen {
                return Ok(());
            }
            self.reader = Some(fresh);
            self.last_seen = 0;
        }
        if self.reader.is_none() {
            self.reader = Some(self.stores.attach(&self.store_name).map_err(|e| e.to_string())?);
        }
        let reader = self.reader.as_ref().unwrap();
        let frame = match reader.wait_and_copy(self.last_seen, self.wait) {
            Ok(f) => f,
            Err(e @ FrameStoreError::Timeout(_)) => return Err(e.to_string()),
            Err(e) => {
                // the store went away or was recreated; start over on the next notice
                self.reader = None;
                self.last_seen = 0;
                return Err(e.to_string());
            }
        };
        self.last_seen = frame.sequence;
        let g = reader.geometry();
        let rgb = match g.format {
            PixelFormat::Rgb8 => RgbImage::from_raw(g.width, g.height, frame.pixels),
            PixelFormat::Gray8 => {
                let data = frame.pixels.iter().flat_map(|&v| [v, v, v]).collect();
                RgbImage::from_raw(g.width, g.height, data)
            }
        }
        .map_err(|e| e.to_string())?;
        match detect_lane(&rgb, &self.cam, &self.params, frame.sample_ts) {
            Ok(det) => {
                let line = if self.y_bias != 0.0 {
                    det.center.offset_y(self.y_bias)
                } else {
                    det.center
                };
                publish(bus, line, frame.sample_ts);
                Ok(())
            }
            Err(VisionError::NotFound(why)) => {
                diagnose(
                    bus,
                    &self.identity,
                    HealthState::Degraded,
                    format!("frame {}: {why}", frame.sequence),
                    now,
                );
                Ok(())
            }
            Err(e) => Err(format!("frame {}: {e}", frame.sequence)),
        }
    }
}

impl Service for LaneDetector {
    fn identity(&self) -> &ServiceIdentity {
        &self.identity
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        vec![MessageKind::ImageNotice]
    }

    fn period(&self) -> Option<Duration> {
        None
    }

    fn on_message(&mut self, bus: &BusSession, _env: &Envelope, msg: Message, now: Micros) {
        let Message::ImageNotice(notice) = msg else {
            return;
        };
        if let Err(e) = self.process(bus, &notice, now) {
            diagnose(bus, &self.identity, HealthState::Degraded, e, now);
        }
    }

    fn tick(&mut self, _: &BusSession, _: Micros) {}
}
