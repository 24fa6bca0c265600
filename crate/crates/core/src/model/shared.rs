use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};

use super::{
    AttributeHandle, DataSet, DataValue, ModelError, ObjectReference, ServerModel, WriteChannel,
};

/// Notification emitted after every successful write.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelChange {
    pub reference: ObjectReference,
    pub value: DataValue,
    pub timestamp_us: u64,
    /// False when the write stored the same value again.
    pub value_changed: bool,
}

struct Inner {
    model: Mutex<ServerModel>,
    watchers: Mutex<Vec<Sender<ModelChange>>>,
}

/// Cloneable handle that serializes all model access through one lock and
/// fans write notifications out to watchers.
#[derive(Clone)]
pub struct SharedModel {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for SharedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("SharedModel").field(&*self.lock()).finish()
    }
}

impl SharedModel {
    pub fn new(model: ServerModel) -> Self {
        Self {
            inner: Arc::new(Inner {
                model: Mutex::new(model),
                watchers: Mutex::new(Vec::new()),
            }),
        }
    }

    /// Direct access for bulk reads. Writes should go through [`SharedModel::write`]
    /// so watchers are notified.
    pub fn lock(&self) -> MutexGuard<'_, ServerModel> {
        self.inner.model.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn watch(&self) -> Receiver<ModelChange> {
        let (tx, rx) = channel();
        self.inner
            .watchers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(tx);
        rx
    }

    pub fn resolve(&self, reference: &ObjectReference) -> Result<AttributeHandle, ModelError> {
        self.lock().resolve(reference)
    }

    pub fn read(&self, reference: &ObjectReference) -> Result<(DataValue, u64), ModelError> {
        self.lock().read(reference)
    }

    pub fn write(
        &self,
        reference: &ObjectReference,
        value: DataValue,
        channel: WriteChannel,
    ) -> Result<u64, ModelError> {
        // watchers are notified while the model lock is held so they observe
        // writes in commit order
        let mut model = self.lock();
        let (ts, value_changed) = model.write(reference, value.clone(), channel)?;
        let change = ModelChange {
            reference: reference.clone(),
            value,
            timestamp_us: ts,
            value_changed,
        };
        let mut watchers = self
            .inner
            .watchers
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        watchers.retain(|w| w.send(change.clone()).is_ok());
        drop(watchers);
        drop(model);
        Ok(ts)
    }

    pub fn define_dataset(
        &self,
        name: &str,
        members: Vec<ObjectReference>,
    ) -> Result<DataSet, ModelError> {
        self.lock().define_dataset(name, members)
    }

    pub fn dataset(&self, name: &str) -> Option<DataSet> {
        self.lock().dataset(name).cloned()
    }

    pub fn snapshot(
        &self,
        name: &str,
    ) -> Result<Vec<(ObjectReference, DataValue, u64)>, ModelError> {
        self.lock().snapshot(name)
    }

    pub fn browse(&self, prefix: &str) -> Vec<ObjectReference> {
        self.lock().browse(prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_home_model, paths};
    use crate::plant::PlantConfig;
    use std::thread;

    #[test]
    fn watchers_see_writes_in_order() {
        let m = SharedModel::new(build_home_model(&PlantConfig::default()).unwrap());
        let rx = m.watch();
        let grid: ObjectReference = paths::GRID_W.parse().unwrap();
        for i in 0..5 {
            m.write(&grid, DataValue::Float32(i as f32), WriteChannel::Plant)
                .unwrap();
        }
        let got: Vec<_> = rx.try_iter().map(|c| c.value).collect();
        assert_eq!(
            got,
            (0..5).map(|i| DataValue::Float32(i as f32)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn concurrent_readers_see_monotone_timestamps() {
        let m = SharedModel::new(build_home_model(&PlantConfig::default()).unwrap());
        let grid: ObjectReference = paths::GRID_W.parse().unwrap();
        let writer = {
            let m = m.clone();
            let grid = grid.clone();
            thread::spawn(move || {
                for i in 0..2000 {
                    m.write(&grid, DataValue::Float32(i as f32), WriteChannel::Plant)
                        .unwrap();
                }
            })
        };
        let mut last = 0;
        for _ in 0..2000 {
            let (_, ts) = m.read(&grid).unwrap();
            assert!(ts >= last);
            last = ts;
        }
        writer.join().unwrap();
    }
}
